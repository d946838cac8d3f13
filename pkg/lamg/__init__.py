"""
Learned adaptive tetrahedral meshing for Poisson problems
"""

__version__ = "0.1.0"
