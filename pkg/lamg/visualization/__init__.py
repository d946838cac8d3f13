"""
Static report figures
"""
