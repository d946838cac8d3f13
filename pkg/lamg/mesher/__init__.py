"""
Tetrahedral mesh generation, adaptive refinement and sizing fields
"""
