"""Dispel CLI Package"""
