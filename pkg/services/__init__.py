"""
Estimation, simulation and bound services for hazard-dantzig
"""
