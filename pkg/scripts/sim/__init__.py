"""
Conveyor simulator: perception model, episode runners, baselines and benchmark.
"""
