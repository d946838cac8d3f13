"""
Graph network that predicts sizing fields from sparse Monte Carlo samples
"""
