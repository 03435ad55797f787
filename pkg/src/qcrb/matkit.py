"""Dense complex linear algebra for small Hermitian matrices.

The eigensolver is a cyclic Jacobi iteration. A compiled sweep kernel is used
when the ``qcrb._jacobi`` extension is importable; otherwise the pure-Python
sweep in ``qcrb._jacobi_py`` runs instead. Set ``QCRB_PURE_PYTHON=1`` to force
the fallback. ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import _jacobi_py
from .errors import (
    CapacityError,
    DomainError,
    NotHermitianError,
    NumericalFailure,
    ShapeError,
    SingularMatrixError,
)

if os.environ.get("QCRB_PURE_PYTHON"):
    _kernel = _jacobi_py
    BACKEND = "python"
else:
    try:
        from . import _jacobi as _kernel

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _kernel = _jacobi_py
        BACKEND = "python"


@dataclass(frozen=True)
class Tolerances:
    hermiticity: float = 1e-12
    reconstruction: float = 1e-10
    psd_floor: float = 1e-12
    singular_floor: float = 1e-12
    capacity: int = 4096
    jacobi_rtol: float = 1e-15
    jacobi_max_sweeps: int = 60


TOL = Tolerances()

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SX, SY, SZ)


def ket(d, k):
    """Computational basis vector ``|k>`` (0-based) of dimension ``d``."""
    v = np.zeros(d, dtype=complex)
    v[k] = 1.0
    return v


def projector(v):
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _square(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    return a


def hermitian(a, tol=None):
    """Certify ``a`` as Hermitian and return its exact symmetrization."""
    tol = TOL.hermiticity if tol is None else tol
    a = _square(np.asarray(a, dtype=complex))
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    dev = float(np.max(np.abs(a - dagger(a)), initial=0.0))
    if dev > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian (max deviation {dev:.3g})")
    return 0.5 * (a + dagger(a))


def symmetric(a, tol=None):
    """Real symmetric counterpart of :func:`hermitian`."""
    tol = TOL.hermiticity if tol is None else tol
    a = np.asarray(a)
    if np.iscomplexobj(a):
        if np.max(np.abs(a.imag), initial=0.0) > tol:
            raise NotHermitianError("matrix has a non-negligible imaginary part")
        a = a.real
    a = _square(a.astype(float))
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise NotHermitianError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def eig_hermitian(a):
    """Eigendecomposition ``a = V diag(w) V^dagger`` with ascending ``w``.

    Real input gives a real orthogonal ``V``. Within a degenerate cluster the
    eigenvectors are an arbitrary orthonormal basis.
    """
    a = _square(np.asarray(a))
    real_input = not np.iscomplexobj(a)
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - dagger(a)), initial=0.0) > 1e3 * TOL.hermiticity * scale:
        raise NotHermitianError("eigendecomposition needs a Hermitian matrix")
    a = 0.5 * (a + dagger(a))
    if a.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0), dtype=float if real_input else complex)
    w, v, sweeps = _kernel.jacobi_hermitian(
        np.ascontiguousarray(a, dtype=complex), TOL.jacobi_rtol, TOL.jacobi_max_sweeps
    )
    if sweeps < 0:
        raise NumericalFailure(
            f"Jacobi iteration did not converge in {TOL.jacobi_max_sweeps} sweeps"
        )
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    if real_input:
        v = v.real.copy()
    return w, v


def eigvals_hermitian(a):
    return eig_hermitian(a)[0]


_FUNCS = {
    "sqrt": np.sqrt,
    "inv": lambda x: 1.0 / x,
    "inv_sqrt": lambda x: 1.0 / np.sqrt(x),
}


def psd_function(a, f, floor=None):
    """Apply ``f`` in {"sqrt", "inv", "inv_sqrt"} to a PSD matrix spectrally."""
    if f not in _FUNCS:
        raise ValueError(f"unknown spectral function {f!r}")
    floor = TOL.singular_floor if floor is None else floor
    w, v = eig_hermitian(a)
    if f == "sqrt":
        if w.size and w[0] < -TOL.psd_floor * max(1.0, abs(w[-1])):
            raise DomainError(f"matrix is not positive semidefinite (eigenvalue {w[0]:.3g})")
        w = np.clip(w, 0.0, None)
    elif w.size and w[0] <= floor:
        raise SingularMatrixError(
            f"eigenvalue {w[0]:.3g} is below the singularity floor {floor:g}", eigenvalue=w[0]
        )
    fw = _FUNCS[f](w)
    out = (v * fw) @ dagger(v)
    return 0.5 * (out + dagger(out))


def inv_psd(a, floor=None):
    return psd_function(a, "inv", floor)


def sqrt_psd(a):
    return psd_function(a, "sqrt")


def inv_sqrt_psd(a, floor=None):
    return psd_function(a, "inv_sqrt", floor)


def tensor(a, b, cap=None):
    """Kronecker product with a cap on the resulting row dimension."""
    cap = TOL.capacity if cap is None else cap
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    rows = a.shape[0] * b.shape[0]
    if rows > cap or a.shape[1] * b.shape[1] > cap:
        raise CapacityError(f"tensor dimension {rows} exceeds cap {cap}")
    return np.kron(a, b)


def tensor_all(factors, cap=None):
    factors = list(factors)
    if not factors:
        raise ValueError("need at least one factor")
    return reduce(lambda x, y: tensor(x, y, cap), factors)


def min_eig(a):
    return float(eigvals_hermitian(a)[0])


def is_psd(a, floor):
    return min_eig(a) >= floor


def frob(a):
    return float(np.linalg.norm(a))
