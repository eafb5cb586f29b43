"""Dispel Services Package"""
