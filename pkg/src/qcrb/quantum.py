"""Parametric state models, POVMs and Born-rule sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import matkit
from .errors import CapacityError, ConfigError, DomainError, ShapeError
from .matkit import I2, PAULI, SX, SY, SZ, TOL, dagger, projector

# ---------------------------------------------------------------------------
# Parametric models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricModel:
    """A family ``theta -> rho(theta)`` with analytic partial derivatives.

    ``rho_fn`` and ``drho_fn`` are called only for parameters accepted by
    ``domain_fn``. ``affine`` optionally holds ``(A0, [A_i])`` for models where
    ``rho = A0 + sum_i theta_i A_i`` exactly, which lets likelihood grids be
    evaluated without building one matrix per point.
    """

    name: str
    dim: int
    nparams: int
    rho_fn: Callable[[np.ndarray], np.ndarray]
    drho_fn: Callable[[np.ndarray], list]
    domain_fn: Callable[[np.ndarray], bool]
    affine: tuple | None = None
    params: dict = field(default_factory=dict)

    def _theta(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.nparams:
            raise ShapeError(f"{self.name} expects {self.nparams} parameters, got {theta.size}")
        if not self.domain_fn(theta):
            raise DomainError(f"parameter {theta.tolist()} is outside the {self.name} domain")
        return theta

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return theta.size == self.nparams and bool(self.domain_fn(theta))

    def rho(self, theta):
        return self.rho_fn(self._theta(theta))

    def drho(self, theta):
        return list(self.drho_fn(self._theta(theta)))

    def state(self, theta):
        """``(rho, [drho_i])`` at ``theta``."""
        theta = self._theta(theta)
        return self.rho_fn(theta), list(self.drho_fn(theta))


def gell_mann(d):
    """Generalized Gell-Mann matrices normalized to ``tr(l_i l_j) = 2 delta_ij``.

    Order: symmetric off-diagonal pairs, antisymmetric pairs, then diagonal
    ones, so ``d = 2`` yields ``(sigma_x, sigma_y, sigma_z)``.
    """
    sym, asym, diag = [], [], []
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            sym.append(s)
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            asym.append(a)
    for l in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        m[np.arange(l), np.arange(l)] = 1.0
        m[l, l] = -l
        diag.append(m * np.sqrt(2.0 / (l * (l + 1))))
    return sym + asym + diag


def density_from_bloch(r):
    """``rho = (I + r.sigma) / 2`` for a Bloch vector with ``|r| <= 1``."""
    r = np.asarray(r, dtype=float).reshape(3)
    if np.linalg.norm(r) > 1.0 + 1e-12:
        raise DomainError(f"Bloch vector {r.tolist()} has norm > 1")
    return 0.5 * (I2 + r[0] * SX + r[1] * SY + r[2] * SZ)


def bloch_from_density(rho):
    return np.array([np.real(np.trace(rho @ s)) for s in PAULI])


def full_mixed_qubit():
    halves = [0.5 * s for s in PAULI]

    def rho_fn(t):
        return 0.5 * (I2 + t[0] * SX + t[1] * SY + t[2] * SZ)

    return ParametricModel(
        name="full_mixed_qubit",
        dim=2,
        nparams=3,
        rho_fn=rho_fn,
        drho_fn=lambda t: halves,
        domain_fn=lambda t: float(t @ t) < 1.0,
        affine=(0.5 * I2, halves),
    )


def full_mixed_qudit(d):
    """``rho = I/d + (1/2) sum_i theta_i l_i`` over the generalized Gell-Mann basis."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    gens = gell_mann(d)
    halves = [0.5 * g for g in gens]
    base = np.eye(d, dtype=complex) / d
    stack = np.array(halves)

    def rho_fn(t):
        return base + np.tensordot(t, stack, axes=1)

    def domain(t):
        return matkit.min_eig(rho_fn(t)) > 0.0

    return ParametricModel(
        name="full_mixed_qudit",
        dim=d,
        nparams=d * d - 1,
        rho_fn=rho_fn,
        drho_fn=lambda t: halves,
        domain_fn=domain,
        affine=(base, halves),
        params={"d": d},
    )


def mixed_qudit_coordinates(rho):
    """Coordinates of ``rho`` in the :func:`full_mixed_qudit` chart."""
    d = rho.shape[0]
    return np.array([np.real(np.trace(rho @ g)) for g in gell_mann(d)])


def polar_ket(eta, phi):
    return np.array([np.cos(eta / 2), np.sin(eta / 2) * np.exp(1j * phi)])


def polar_to_bloch(eta, phi):
    return np.array([np.sin(eta) * np.cos(phi), np.sin(eta) * np.sin(phi), np.cos(eta)])


def bloch_to_polar(r):
    r = np.asarray(r, dtype=float)
    eta = float(np.arccos(np.clip(r[2] / np.linalg.norm(r), -1.0, 1.0)))
    phi = float(np.arctan2(r[1], r[0]))
    return np.array([eta, phi])


def polar_frame(eta, phi):
    """Unit tangent vectors ``(e_eta, e_phi)`` of the sphere at ``(eta, phi)``."""
    e_eta = np.array([np.cos(eta) * np.cos(phi), np.cos(eta) * np.sin(phi), -np.sin(eta)])
    e_phi = np.array([-np.sin(phi), np.cos(phi), 0.0])
    return e_eta, e_phi


def polar_perp(eta, phi):
    """Unit ket orthogonal to :func:`polar_ket` pointing along ``+eta``."""
    return np.array([-np.sin(eta / 2), np.cos(eta / 2) * np.exp(1j * phi)])


def pure_qubit_polar():
    """``|psi> = cos(eta/2)|up> + sin(eta/2) e^{i phi}|down>``, ``0 < eta < pi``."""

    def rho_fn(t):
        return density_from_bloch(polar_to_bloch(t[0], t[1]))

    def drho_fn(t):
        eta, phi = t
        d_eta = np.array([np.cos(eta) * np.cos(phi), np.cos(eta) * np.sin(phi), -np.sin(eta)])
        d_phi = np.array([-np.sin(eta) * np.sin(phi), np.sin(eta) * np.cos(phi), 0.0])
        return [0.5 * sum(c * s for c, s in zip(v, PAULI)) for v in (d_eta, d_phi)]

    return ParametricModel(
        name="pure_qubit_polar",
        dim=2,
        nparams=2,
        rho_fn=rho_fn,
        drho_fn=drho_fn,
        domain_fn=lambda t: 0.0 < t[0] < np.pi,
    )


def _linear_ket_model(name, u0, directions, params):
    """Pure model ``rho = |u><u| / <u|u>`` with ``u = u0 + sum_i theta_i b_i``."""
    u0 = np.asarray(u0, dtype=complex)
    b = np.array(directions, dtype=complex)

    def ket(t):
        return u0 + t @ b

    def rho_fn(t):
        u = ket(t)
        return projector(u) / np.real(np.vdot(u, u))

    def drho_fn(t):
        u = ket(t)
        n = np.real(np.vdot(u, u))
        uu = projector(u)
        out = []
        for bi in b:
            dn = 2.0 * np.real(np.vdot(u, bi))
            cross = np.outer(bi, u.conj()) + np.outer(u, bi.conj())
            out.append(cross / n - uu * dn / n**2)
        return out

    return ParametricModel(
        name=name,
        dim=u0.size,
        nparams=len(b),
        rho_fn=rho_fn,
        drho_fn=drho_fn,
        domain_fn=lambda t: bool(np.all(np.isfinite(t))),
        params=params,
    )


def default_perp(psi0):
    """Fixed phase convention for the qubit ket orthogonal to ``psi0``."""
    a, b = np.asarray(psi0, dtype=complex) / np.linalg.norm(psi0)
    return np.array([-np.conj(b), np.conj(a)])


def pure_qubit_tangent(psi0=None, perp=None, lam=0.0):
    """Local chart ``|psi0> + (theta_1 + i theta_2) |psi1'>`` with ``H(0) = I``.

    ``|psi1'> = e^{i lam} |perp> / 2``; the factor 1/2 makes the Helstrom
    matrix the identity at the reference point.
    """
    psi0 = np.array([1.0, 0.0], dtype=complex) if psi0 is None else np.asarray(psi0, complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    perp = default_perp(psi0) if perp is None else np.asarray(perp, complex)
    psi1 = 0.5 * np.exp(1j * lam) * perp
    return _linear_ket_model(
        "pure_qubit_tangent", psi0, [psi1, 1j * psi1], {"psi0": psi0, "perp": perp, "lam": lam}
    )


def pure_qudit_tangent(d, unitary=None):
    """Pure chart around ``U|1>`` with ``2d - 2`` real parameters.

    Parameters are ordered ``(2+, 2-, 3+, 3-, ...)``; at the origin the
    derivatives are ``|1><k| + |k><1|`` and ``i|1><k| - i|k><1|`` conjugated by
    ``U``, so ``H(0) = 4 I``.
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    u = np.eye(d, dtype=complex) if unitary is None else np.asarray(unitary, complex)
    dirs = []
    for k in range(1, d):
        dirs.append(u[:, k])
        dirs.append(-1j * u[:, k])
    return _linear_ket_model("pure_qudit_tangent", u[:, 0], dirs, {"d": d})


_CHARTS = {
    "full_mixed_qubit": lambda **kw: full_mixed_qubit(),
    "pure_qubit_polar": lambda **kw: pure_qubit_polar(),
    "pure_qubit_tangent": lambda **kw: pure_qubit_tangent(**kw),
    "pure_qudit_tangent": lambda d=2, **kw: pure_qudit_tangent(d, **kw),
    "full_mixed_qudit": lambda d=2, **kw: full_mixed_qudit(d),
}


def make_model(chart, **params):
    """Build a built-in chart by name (as referenced in manifests)."""
    try:
        return _CHARTS[chart](**params)
    except KeyError:
        raise ConfigError(f"unknown model chart {chart!r}", field="chart") from None


# ---------------------------------------------------------------------------
# POVMs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Povm:
    elements: tuple
    labels: tuple = ()
    copies: int = 1

    def __post_init__(self):
        elems = tuple(np.asarray(e, dtype=complex) for e in self.elements)
        if not elems:
            raise ShapeError("a POVM needs at least one element")
        dim = elems[0].shape[0]
        for e in elems:
            if e.shape != (dim, dim):
                raise ShapeError(f"POVM element of shape {e.shape}, expected {(dim, dim)}")
        labels = tuple(self.labels) if self.labels else tuple(range(len(elems)))
        if len(labels) != len(elems):
            raise ShapeError("label count does not match element count")
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.elements[0].shape[0]

    def __len__(self):
        return len(self.elements)

    def stack(self):
        return np.array(self.elements)


@dataclass(frozen=True)
class PovmReport:
    min_eigenvalues: list
    completeness_residual: float
    passed: bool


def validate_povm(M, psd_floor=-1e-12, completeness_tol=1e-10):
    """Report per-element minimum eigenvalues and the completeness residual."""
    mins = [float(matkit.eigvals_hermitian(0.5 * (e + dagger(e)))[0]) for e in M.elements]
    herm_ok = all(np.max(np.abs(e - dagger(e))) <= TOL.hermiticity * max(1.0, np.max(np.abs(e))) for e in M.elements)
    resid = float(np.max(np.abs(sum(M.elements) - np.eye(M.dim))))
    passed = herm_ok and min(mins) >= psd_floor and resid <= completeness_tol
    return PovmReport(mins, resid, passed)


def outcome_distribution(M, rho_n):
    """Born-rule probabilities ``tr(rho M_xi)``.

    Round-off negativity down to -1e-12 is clamped and the vector renormalized.
    """
    rho_n = np.asarray(rho_n)
    if rho_n.shape != (M.dim, M.dim):
        raise ShapeError(f"state of shape {rho_n.shape} does not match POVM dimension {M.dim}")
    p = np.real(np.einsum("kij,ji->k", M.stack(), rho_n))
    if p.min() < -1e-12:
        raise DomainError(f"negative outcome probability {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > 1e-10:
        raise DomainError(f"outcome probabilities sum to {total!r}")
    return p / total


def refine_to_rank1(M, drop=1e-14):
    """Split every element into weighted rank-1 projectors along its eigenbasis."""
    elems, labels = [], []
    for e, lab in zip(M.elements, M.labels):
        w, v = matkit.eig_hermitian(e)
        keep = [j for j in range(len(w)) if w[j] > drop]
        for j in keep:
            elems.append(w[j] * projector(v[:, j]))
            labels.append(lab if len(keep) == 1 else f"{lab}.{j}")
    return Povm(tuple(elems), tuple(labels), M.copies)


def tensor_power_state(model, theta, n, cap=None):
    """``rho^{(x)n}`` and the Leibniz-sum derivatives for every parameter."""
    rho, drho = model.state(theta)
    cap = TOL.capacity if cap is None else cap
    if model.dim**n > cap:
        raise CapacityError(f"{model.dim}^{n} exceeds capacity {cap}")
    if n == 1:
        return rho, drho
    # prefix[k] = rho^(x)k, suffix[k] = rho^(x)(n-k)
    prefix = [np.ones((1, 1), dtype=complex)]
    for _ in range(n):
        prefix.append(np.kron(prefix[-1], rho))
    derivs = []
    for dr in drho:
        acc = np.zeros((model.dim**n,) * 2, dtype=complex)
        for pos in range(n):
            acc += np.kron(np.kron(prefix[pos], dr), prefix[n - pos - 1])
        derivs.append(acc)
    return prefix[n], derivs


def product_povm(factors: Sequence[Povm], cap=None):
    """Tensor-product POVM over the Cartesian product of outcome sets."""
    factors = list(factors)
    cap = TOL.capacity if cap is None else cap
    dim = int(np.prod([f.dim for f in factors]))
    if dim > cap:
        raise CapacityError(f"product dimension {dim} exceeds capacity {cap}")
    elems, labels = [np.ones((1, 1), dtype=complex)], [()]
    for f in factors:
        elems = [np.kron(a, b) for a in elems for b in f.elements]
        labels = [la + (lb,) for la in labels for lb in f.labels]
    return Povm(tuple(elems), tuple(labels), sum(f.copies for f in factors))


def sample_outcome(M, rho, rng):
    p = outcome_distribution(M, rho)
    return M.labels[int(rng.choice(len(p), p=p))]


def sample_counts(M, rho, n, rng):
    """Outcome tallies of ``n`` independent measurements, in element order."""
    return rng.multinomial(n, outcome_distribution(M, rho))


def spin_povm(m, weight=1.0, label=""):
    """``{w P_{+m}, w P_{-m}}`` for a unit Bloch direction ``m``."""
    m = np.asarray(m, dtype=float)
    m = m / np.linalg.norm(m)
    ms = m[0] * SX + m[1] * SY + m[2] * SZ
    return [weight * 0.5 * (I2 + ms), weight * 0.5 * (I2 - ms)], [f"+{label}", f"-{label}"]


def pauli_povm(axis):
    idx = "xyz".index(axis)
    elems, labels = spin_povm(np.eye(3)[idx], label=axis)
    return Povm(tuple(elems), tuple(labels))


# ---------------------------------------------------------------------------
# JSON interchange: {dim, copies, labels, elements: [[[re, im], ...], ...]}
# ---------------------------------------------------------------------------


def povm_to_json(M):
    return {
        "dim": M.dim,
        "copies": M.copies,
        "labels": [str(l) for l in M.labels],
        "elements": [[[[float(z.real), float(z.imag)] for z in row] for row in e] for e in M.elements],
    }


def povm_from_json(doc):
    try:
        dim = int(doc["dim"])
        elems = [np.array([[complex(re, im) for re, im in row] for row in e]) for e in doc["elements"]]
        copies = int(doc.get("copies", 1))
        labels = tuple(doc.get("labels") or range(len(elems)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed POVM document ({exc})", field="povm") from exc
    for e in elems:
        if e.shape != (dim, dim):
            raise ConfigError(f"element shape {e.shape} does not match dim {dim}", field="povm.elements")
    return Povm(tuple(elems), labels, copies)


def save_povm(M, path):
    with open(path, "w") as fh:
        json.dump(povm_to_json(M), fh, indent=1)


def load_povm(path):
    with open(path) as fh:
        return povm_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Random objects for property checks and verification suites
# ---------------------------------------------------------------------------


def random_unitary(d, rng):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


def random_density(d, rng, rank=None):
    rank = d if rank is None else rank
    x = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = x @ dagger(x)
    return rho / np.real(np.trace(rho))


def random_exhaustive_povm(d, n_outcomes, rng):
    """Rank-1 POVM from the rows of a random ``n_outcomes x d`` isometry."""
    if n_outcomes < d:
        raise ValueError("an exhaustive POVM needs at least d outcomes")
    v = random_unitary(n_outcomes, rng)[:, :d]
    return Povm(tuple(np.outer(v[k].conj(), v[k]) for k in range(n_outcomes)))


def random_povm(d, n_outcomes, rng, rank=None):
    """Generic POVM ``S^{-1/2} A_k S^{-1/2}`` from random PSD ``A_k``."""
    rank = d if rank is None else rank
    raw = []
    for _ in range(n_outcomes):
        x = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
        raw.append(x @ dagger(x))
    s_inv_half = matkit.inv_sqrt_psd(sum(raw))
    return Povm(tuple(s_inv_half @ a @ s_inv_half for a in raw))


def random_bloch(rng, max_norm=1.0):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * max_norm * rng.uniform() ** (1.0 / 3.0)
