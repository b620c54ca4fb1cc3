"""Gesture spotting against continuous background activity in depth-sensor skeleton streams."""

__version__ = "0.1.0"
