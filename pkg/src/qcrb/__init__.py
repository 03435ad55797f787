"""Numerical lab for quantum Cramér–Rao bounds on qubits and qudits."""

from .errors import QcrbError
from .matkit import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "QcrbError", "__version__"]
