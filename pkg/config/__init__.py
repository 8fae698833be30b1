"""
Configuration package: runtime settings and shipped scenario files.
"""
