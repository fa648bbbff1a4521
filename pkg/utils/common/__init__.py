"""
Common utilities for the wave tail laboratory: logging and the error hierarchy.
"""
