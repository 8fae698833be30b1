"""
Planning core: kinematics, the time-augmented lattice, weighted A*, preprocessing and queries.
"""
