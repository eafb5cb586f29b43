"""
Dispel Tests Package
"""
