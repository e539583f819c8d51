"""Numerical laboratory for Cantor-set rearrangements, tentacle squeezes and cavitation."""

__version__ = "0.1.0"
