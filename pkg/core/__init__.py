"""Dispel Core Package"""
