"""Optimal measurement design for qubits.

Covers the cost-optimal scaled error matrix, explicit POVMs that realize a
target information matrix for the mixed and pure qubit, and the two-copy
collective POVM whose Fisher information beats every separable measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import BoundaryError, ConfigError, ShapeError, TargetError
from .information import helstrom_matrix
from .matkit import I2, SX, SY, SZ, projector
from .quantum import Povm, default_perp, full_mixed_qubit, pure_qubit_tangent, spin_povm

ADMISSIBLE_TOL = 1e-12
NEAR_SINGULAR_COND = 1e8


def optimal_scaled_mqe(c, h, d):
    """Minimize ``tr(C W)`` subject to ``tr(H^{-1} W^{-1}) = d - 1``.

    Returns ``(W_opt, min_cost)`` with
    ``min_cost = (tr sqrt(H^{-1/2} C H^{-1/2}))^2 / (d - 1)``.
    """
    c = matkit.symmetric(c)
    h = matkit.symmetric(h)
    matkit.inv_psd(c)  # raises on singular C
    w_h = matkit.eigvals_hermitian(h)
    if w_h[0] <= matkit.TOL.singular_floor:
        raise matkit.SingularMatrixError(f"H has eigenvalue {w_h[0]:.3g}", eigenvalue=w_h[0])
    if w_h[-1] / w_h[0] > NEAR_SINGULAR_COND:
        c_half = matkit.sqrt_psd(c)
        t = matkit.sqrt_psd(c_half @ matkit.inv_psd(h) @ c_half)
        scale = np.trace(t) / (d - 1)
        c_inv_half = matkit.inv_sqrt_psd(c)
        w = scale * c_inv_half @ t @ c_inv_half
    else:
        h_inv_half = matkit.inv_sqrt_psd(h)
        s = matkit.sqrt_psd(h_inv_half @ c @ h_inv_half)
        scale = np.trace(s) / (d - 1)
        # sqrt(H^{1/2} C^{-1} H^{1/2}) is the inverse of s
        w = scale * h_inv_half @ matkit.inv_psd(s) @ h_inv_half
    w = 0.5 * (w + w.T)
    return w, float(np.trace(c @ w))


def validate_target(g, h):
    """``(admissible, tr(H^{-1} G))``: admissible iff PSD and trace <= 1."""
    g = np.asarray(g, dtype=float)
    if g.shape != np.shape(h):
        raise ShapeError(f"target of shape {g.shape} does not match H of shape {np.shape(h)}")
    trace = float(np.trace(matkit.inv_psd(h) @ g))
    psd = matkit.min_eig(0.5 * (g + g.T)) >= -1e-10
    sym = np.max(np.abs(g - g.T), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(g)))
    return bool(psd and sym and trace <= 1.0 + ADMISSIBLE_TOL), trace


@dataclass(frozen=True)
class MixedQubitDesign:
    """Spin measurements along ``directions[i]`` with probabilities ``gammas[i]``.

    ``eigvecs[i]`` are the eigenvectors ``f_i`` of ``H^{-1/2} G H^{-1/2}`` and
    ``theta0`` the point at which ``H`` was evaluated.
    """

    theta0: np.ndarray
    gammas: np.ndarray
    directions: np.ndarray
    eigvecs: np.ndarray

    @property
    def remainder(self):
        return max(0.0, 1.0 - float(np.sum(self.gammas)))

    def to_json(self):
        return {
            "kind": "mixed_qubit",
            "theta0": self.theta0.tolist(),
            "gammas": self.gammas.tolist(),
            "directions": self.directions.tolist(),
            "eigvecs": self.eigvecs.tolist(),
        }


@dataclass(frozen=True)
class PureQubitDesign:
    """Randomized measurement of two +-1 observables on the tangent chart.

    ``A_1`` is measured with probability ``probs[0]`` and ``A_2`` with
    ``probs[1]``. ``perp`` fixes the chart (``|psi1'> = e^{i lam} perp / 2``).
    """

    psi0: np.ndarray
    perp: np.ndarray
    lam: float
    probs: np.ndarray
    observables: tuple

    @property
    def remainder(self):
        return max(0.0, 1.0 - float(np.sum(self.probs)))

    @property
    def directions(self):
        """Bloch directions of the two observables."""
        return np.array([[np.real(np.trace(a @ s)) / 2 for s in (SX, SY, SZ)] for a in self.observables])

    def chart(self):
        """Tangent chart (at ``lam = 0``) in which the target was expressed."""
        return pure_qubit_tangent(self.psi0, self.perp, 0.0)

    def to_json(self):
        return {
            "kind": "pure_qubit",
            "psi0": [[z.real, z.imag] for z in self.psi0],
            "perp": [[z.real, z.imag] for z in self.perp],
            "lam": self.lam,
            "probs": self.probs.tolist(),
            "directions": self.directions.tolist(),
        }


def design_mixed_qubit(g, theta0):
    """Spin-measurement design whose Fisher information at ``theta0`` equals ``g``."""
    theta0 = np.asarray(theta0, dtype=float).reshape(3)
    if float(theta0 @ theta0) >= 1.0:
        raise BoundaryError("mixed-qubit design needs an interior point |theta0| < 1")
    h = helstrom_matrix(full_mixed_qubit(), theta0)
    g = np.asarray(g, dtype=float)
    ok, trace = validate_target(g, h)
    if not ok:
        raise TargetError(f"target is not admissible (tr H^-1 G = {trace:.6g})")
    h_inv_half = matkit.inv_sqrt_psd(h)
    h_half = matkit.sqrt_psd(h)
    gammas, f = matkit.eig_hermitian(h_inv_half @ g @ h_inv_half)
    gammas = np.clip(gammas, 0.0, None)
    gvec = (h_half @ f).T
    directions = gvec / np.linalg.norm(gvec, axis=1, keepdims=True)
    return MixedQubitDesign(theta0, gammas, directions, f.T.copy())


def _observable_pair(psi0, chi):
    out = np.outer(psi0, chi.conj())
    return out + out.conj().T, 1j * (out - out.conj().T)


def design_pure_qubit(g, psi0, perp=None):
    """Design realizing target ``g`` (2x2, tangent chart with ``H = I``) at ``psi0``."""
    g = np.asarray(g, dtype=float)
    if g.shape != (2, 2):
        raise TargetError("pure-qubit target must be 2x2")
    ok, trace = validate_target(g, np.eye(2))
    if not ok:
        raise TargetError(f"target is not admissible (tr G = {trace:.6g})")
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    perp = default_perp(psi0) if perp is None else np.asarray(perp, dtype=complex)
    _, vecs = matkit.eig_hermitian(g)
    e1 = vecs[:, 0]
    lam = float(np.arctan2(e1[1], e1[0]))
    e1 = np.array([np.cos(lam), np.sin(lam)])
    e2 = np.array([-np.sin(lam), np.cos(lam)])
    probs = np.clip(np.array([e1 @ g @ e1, e2 @ g @ e2]), 0.0, None)
    chi = np.exp(1j * lam) * perp
    return PureQubitDesign(psi0, perp, lam, probs, _observable_pair(psi0, chi))


def realize_povm(design, drop=1e-12):
    """POVM of a design: weighted spin projectors plus the identity remainder."""
    elems, labels = [], []
    if isinstance(design, MixedQubitDesign):
        for i, (gam, m) in enumerate(zip(design.gammas, design.directions)):
            if gam > drop:
                e, lab = spin_povm(m, gam, label=f"m{i + 1}")
                elems += e
                labels += lab
    else:
        for i, (gam, a) in enumerate(zip(design.probs, design.observables)):
            if gam > drop:
                elems += [gam * 0.5 * (I2 + a), gam * 0.5 * (I2 - a)]
                labels += [f"+A{i + 1}", f"-A{i + 1}"]
    if design.remainder > drop:
        elems.append(design.remainder * I2)
        labels.append("none")
    return Povm(tuple(elems), tuple(labels))


def counterexample_povm():
    """Seven-outcome collective POVM on two qubits (last element entangled)."""
    s2 = 1.0 / np.sqrt(2.0)
    kets = {
        "x": (np.array([s2, s2]), np.array([s2, -s2])),
        "y": (np.array([s2, 1j * s2]), np.array([s2, -1j * s2])),
        "z": (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
    }
    elems, labels = [], []
    for axis, (up, down) in kets.items():
        for sign, k in (("+", up), ("-", down)):
            elems.append(0.5 * projector(np.kron(k, k)))
            labels.append(f"{sign}{axis}{sign}{axis}")
    up, down = kets["z"]
    singlet = (np.kron(up, down) - np.kron(down, up)) * s2
    elems.append(projector(singlet))
    labels.append("singlet")
    return Povm(tuple(elems), tuple(labels), copies=2)


def design_from_json(doc):
    try:
        kind = doc.get("kind", "mixed_qubit")
        if kind == "mixed_qubit":
            return MixedQubitDesign(
                np.asarray(doc["theta0"], float),
                np.asarray(doc["gammas"], float),
                np.asarray(doc["directions"], float),
                np.asarray(doc.get("eigvecs", np.eye(3)), float),
            )
        if kind == "pure_qubit":
            psi0 = np.array([complex(*z) for z in doc["psi0"]])
            perp = np.array([complex(*z) for z in doc["perp"]])
            lam = float(doc["lam"])
            chi = np.exp(1j * lam) * perp
            return PureQubitDesign(psi0, perp, lam, np.asarray(doc["probs"], float), _observable_pair(psi0, chi))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed design document ({exc})", field="design") from exc
    raise ConfigError(f"unknown design kind {kind!r}", field="design.kind")
