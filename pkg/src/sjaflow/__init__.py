"""Statistical Jacobi approximation: decimation statistics, form-factor flows
and quench dynamics for weakly perturbed thermalizing Hamiltonians."""

__version__ = "0.1.0"
