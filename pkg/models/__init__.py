"""Dispel Models Package"""
