"""
mirk-hnn

Learning Hamiltonians from sparse trajectory samples by minimizing
mono-implicit Runge-Kutta interpolation residuals.
"""

__version__ = "0.1.0"
