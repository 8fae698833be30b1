"""
Conveyor Planner Scripts Package

Planning core (lattice, search, preprocessing, queries), the conveyor
simulator and the command-line entry point.
"""

__version__ = "1.0.0"
__author__ = "Conveyor Planner Team"
