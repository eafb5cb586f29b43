"""
Dispel Scripts Package
"""
