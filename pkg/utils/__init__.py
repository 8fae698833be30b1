"""
Utility package for the conveyor planner: logging, config loading and artifact handling.
"""
