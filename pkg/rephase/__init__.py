"""
rephase
Time- and propellant-optimal low-thrust rephasing in circular orbit.
"""

__version__ = "0.1.0"
