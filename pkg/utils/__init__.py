"""Dispel Utils Package"""
