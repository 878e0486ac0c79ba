"""Typed value objects and validated configuration records"""
