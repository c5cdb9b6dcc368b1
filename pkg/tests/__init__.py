"""Test suite for cgrapipe"""
