"""
Poisson problem data, Monte Carlo estimation and the P1 finite element solver
"""
