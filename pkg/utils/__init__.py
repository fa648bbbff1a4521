"""
Utilities package for the wave tail laboratory.
"""
