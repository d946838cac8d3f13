"""
Utility modules for the lamg package
"""
