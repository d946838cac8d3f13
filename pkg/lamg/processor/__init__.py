"""
Dataset generation, experiment runs and metrics
"""
