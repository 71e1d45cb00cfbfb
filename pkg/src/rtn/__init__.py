"""Recurrent Transition Network for generating character locomotion transitions."""

__version__ = "0.1.0"
