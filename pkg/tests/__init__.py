"""
Test suite for splatcore
"""
