"""releaseflow: drug-release curve modeling with classical kinetics and PINNs."""

__version__ = "0.1.0"
