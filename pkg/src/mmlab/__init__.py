"""Geometric analysis on finite metric-measure spaces.

Dyadic cubes, maximal functions, Morrey norms, doubling constants, heat and
Riesz/Bessel kernels, and numerical verification of Fefferman-Phong, Hardy
and spectrum-bound inequalities for discrete Schrodinger operators.
"""
__version__ = "0.1.0"
