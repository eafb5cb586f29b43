"""Dispel Engine Package"""
