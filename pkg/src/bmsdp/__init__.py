"""Burer-Monteiro factorization of semidefinite programs with certified guarantees."""
__version__ = "0.1.0"
