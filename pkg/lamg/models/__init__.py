"""
Configuration and record models for the lamg package
"""
