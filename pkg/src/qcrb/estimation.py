"""Two-stage adaptive qubit estimation and its Monte Carlo evaluation.

Stage 1 spends ``N0 = 3 ceil(N^a / 3)`` copies on Pauli x/y/z tomography to get a
preliminary estimate. Stage 2 measures the remaining ``N' = N - N0`` copies
with the design that realizes the target information at that estimate and
inverts the observed spin frequencies.

Outcome tallies are drawn as binomial counts rather than one Born-rule draw
per copy; the two are equal in distribution.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import matkit
from .design import design_mixed_qubit, design_pure_qubit, optimal_scaled_mqe
from .errors import ConfigError, InsufficientDataError, RankDeficientDesignError
from .information import helstrom_matrix
from .quantum import (
    bloch_to_polar,
    full_mixed_qubit,
    polar_ket,
    polar_perp,
    polar_to_bloch,
    pure_qubit_polar,
    random_bloch,
)

POLICIES = ("project", "discard")
ALLOCATIONS = ("deterministic", "multinomial")
MODEL_KINDS = ("mixed_full", "pure_full")
POLE_GUARD = 1e-3

_MIXED = full_mixed_qubit()
_POLAR = pure_qubit_polar()


def helstrom(theta, model_kind="mixed_full"):
    return helstrom_matrix(_MIXED if model_kind == "mixed_full" else _POLAR, theta)


def trial_rng(seed, index, *stream):
    """Independent generator for one trial, a pure function of its indices."""
    return np.random.default_rng([int(seed), int(index), *stream])


# ---------------------------------------------------------------------------
# Targets G(theta)
# ---------------------------------------------------------------------------


def helstrom_fraction(scale, model_kind="mixed_full"):
    """Target ``G(theta) = scale * H(theta)``."""
    return lambda theta: scale * helstrom(theta, model_kind)


def whitened_target(f, model_kind="mixed_full"):
    """Target ``G = H^{1/2} F H^{1/2}`` for a fixed PSD ``F`` (admissible iff ``tr F <= 1``)."""
    f = matkit.symmetric(f)

    def target(theta):
        h_half = matkit.sqrt_psd(helstrom(theta, model_kind))
        return h_half @ f @ h_half

    return target


def constant_target(g):
    g = matkit.symmetric(g)
    return lambda theta: g


def cost_target(cost, model_kind="mixed_full", d=2):
    """Target ``W_opt(theta)^{-1}`` for a quadratic cost ``C(theta)``."""

    def target(theta):
        w, _ = optimal_scaled_mqe(cost(theta), helstrom(theta, model_kind), d)
        return matkit.inv_psd(w)

    return target


def target_from_config(cfg, model_kind="mixed_full"):
    """Build a target callable from its manifest description."""
    if callable(cfg):
        return cfg
    try:
        kind = cfg["kind"]
        if kind == "helstrom_fraction":
            return helstrom_fraction(float(cfg["scale"]), model_kind)
        if kind == "whitened":
            return whitened_target(np.asarray(cfg["F"], float), model_kind)
        if kind == "constant":
            return constant_target(np.asarray(cfg["G"], float))
        if kind == "cost_helstrom_fraction":
            s = float(cfg["scale"])
            return cost_target(lambda t: s * helstrom(t, model_kind), model_kind)
        if kind == "cost_constant":
            c = matkit.symmetric(np.asarray(cfg["C"], float))
            return cost_target(lambda t: c, model_kind)
    except (KeyError, TypeError, ValueError, matkit.NotHermitianError) as exc:
        raise ConfigError(f"malformed target ({exc})", field="target") from exc
    raise ConfigError(f"unknown target kind {kind!r}", field="target.kind")


def random_domain_point(rng, model_kind="mixed_full", max_norm=0.999):
    if model_kind == "mixed_full":
        return random_bloch(rng, max_norm)
    v = rng.normal(size=3)
    return bloch_to_polar(v / np.linalg.norm(v))


def validate_target_function(target, model_kind="mixed_full", samples=1000, seed=0):
    """Check positivity and ``tr H^{-1} G <= 1`` on random domain points."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        theta = random_domain_point(rng, model_kind)
        h = helstrom(theta, model_kind)
        g = target(theta)
        if matkit.min_eig(g) <= 0.0:
            raise ConfigError(f"target is singular at {theta.tolist()}", field="target")
        trace = float(np.trace(matkit.inv_psd(h) @ g))
        if trace > 1.0 + 1e-12:
            raise ConfigError(
                f"tr H^-1 G = {trace:.6g} > 1 at {theta.tolist()}", field="target"
            )


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    target: Callable = field(default=None, repr=False)
    a: float = 0.7
    policy: str = "project"
    model_kind: str = "mixed_full"
    seed: int = 0
    allocation: str = "deterministic"
    eps_proj: float = 1e-6
    pool_stage1: bool = False

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ConfigError("stage-1 exponent must lie in (0, 1)", field="a")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}", field="policy")
        if self.allocation not in ALLOCATIONS:
            raise ConfigError(f"allocation must be one of {ALLOCATIONS}", field="allocation")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}", field="model_kind")
        if self.target is None:
            raise ConfigError("a target is required", field="target")
        if self.n0 >= self.n:
            raise ConfigError(f"N0 = {self.n0} leaves no copies for stage 2 (N = {self.n})", field="N")

    @property
    def n0(self):
        return 3 * math.ceil(self.n**self.a / 3)

    @property
    def n_prime(self):
        return self.n - self.n0


@dataclass
class TrialResult:
    theta_true: np.ndarray
    theta_tilde: np.ndarray
    theta_hat: np.ndarray | None
    discarded: bool = False
    flagged: bool = False
    counts: np.ndarray | None = None
    eta_hat: np.ndarray | None = None


@dataclass
class MqeEstimate:
    v_hat: np.ndarray
    stderr: np.ndarray
    trials: int
    used: int
    discard_rate: float
    flagged_rate: float = 0.0
    errors: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def stage1_estimate(counts, policy="project", model_kind="mixed_full", eps=1e-6):
    """Preliminary Bloch vector from per-axis ``(n_plus, n_minus)`` tallies.

    Returns ``(theta_tilde, discarded)``. Pure models always project onto the
    unit sphere; mixed models either project into the open ball or, under
    ``"discard"``, flag estimates that fall outside it.
    """
    counts = np.asarray(counts, dtype=float).reshape(3, 2)
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise InsufficientDataError("every Pauli axis needs at least one count")
    r = (counts[:, 0] - counts[:, 1]) / totals
    norm = float(np.linalg.norm(r))
    if model_kind == "pure_full":
        if norm == 0.0:
            return np.array([0.0, 0.0, 1.0]), False
        return r / norm, False
    if norm > 1.0 and policy == "discard":
        return r, True
    if norm > 1.0 - eps:
        r = r * ((1.0 - eps) / norm)
    return r, False


def _design_frames(design):
    h = helstrom_matrix(_MIXED, design.theta0)
    return matkit.sqrt_psd(h), matkit.inv_sqrt_psd(h)


def stage2_matrix(design):
    """Linear map ``L`` with ``theta = L eta``, i.e. ``H^{-1/2} sum_i |H^{1/2} f_i| f_i e_i^T``."""
    if np.any(design.gammas <= 1e-12):
        raise RankDeficientDesignError("design has a direction with zero weight")
    h_half, h_inv_half = _design_frames(design)
    f = design.eigvecs
    g_norm = np.linalg.norm(f @ h_half, axis=1)
    return h_inv_half @ (f.T * g_norm)


def project_to_ball(theta):
    norm = float(np.linalg.norm(theta))
    return theta / norm if norm > 1.0 else theta


def stage2_estimate(design, eta_hat):
    """Invert ``eta_i = theta . m_i`` for the design's three spin directions.

    Uses ``theta = H^{-1/2} sum_i |H^{1/2} f_i| eta_i f_i`` with ``H`` at the
    design point, then projects onto the closed unit ball.
    """
    return project_to_ball(stage2_matrix(design) @ np.asarray(eta_hat, dtype=float))


def conditional_mqe(design, theta_true, n_prime):
    """Exact stage-2 error matrix given the preliminary estimate.

    ``V = (1/N') sum_i (1/gamma_i) (|g_i|^2 - (theta . g_i)^2)
    H^{-1/2} f_i f_i^T H^{-1/2}`` with ``g_i = H^{1/2} f_i`` and ``H`` at the
    design point.
    """
    if np.any(design.gammas <= 1e-12):
        raise RankDeficientDesignError("design has a direction with zero weight")
    theta_true = np.asarray(theta_true, dtype=float)
    h_half, h_inv_half = _design_frames(design)
    v = np.zeros((3, 3))
    for gam, f in zip(design.gammas, design.eigvecs):
        g = h_half @ f
        g2 = float(g @ g)
        var = 1.0 - (theta_true @ g) ** 2 / g2
        u = h_inv_half @ f
        v += var * g2 / gam * np.outer(u, u)
    return v / n_prime


def _trim_roundoff(g, h):
    """Pull ``g`` just inside ``tr H^{-1} G <= 1`` when it overshoots by round-off only."""
    trace = float(np.trace(matkit.inv_psd(h) @ g))
    if 1.0 < trace <= 1.0 + 1e-9:
        return g * ((1.0 - 1e-9) / trace)
    return g


def _allocate(weights, n_prime, mode, rng):
    weights = np.asarray(weights, dtype=float)
    if mode == "deterministic":
        return np.floor(weights * n_prime + 1e-9).astype(np.int64)
    rest = max(0.0, 1.0 - weights.sum())
    probs = np.append(weights, rest)
    return rng.multinomial(n_prime, probs / probs.sum())[:-1]


def _stage1_counts(bloch, n0, rng):
    per = n0 // 3
    plus = rng.binomial(per, (1.0 + np.clip(bloch, -1.0, 1.0)) / 2.0)
    return np.stack([plus, per - plus], axis=1)


def _frequencies(x, directions, bloch, rng):
    x = np.asarray(x)
    p_plus = np.clip((1.0 + directions @ bloch) / 2.0, 0.0, 1.0)
    k = rng.binomial(x, p_plus)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(x > 0, 2.0 * k / np.maximum(x, 1) - 1.0, np.nan)


def run_protocol(config, theta_true, trial_index=0):
    """Simulate one run of the two-stage protocol on ``config.n`` copies."""
    rng = trial_rng(config.seed, trial_index)
    theta_true = np.asarray(theta_true, dtype=float)
    if config.model_kind == "pure_full":
        return _run_pure(config, theta_true, rng)
    if float(theta_true @ theta_true) >= 1.0:
        raise ConfigError("mixed-model protocol needs |theta| < 1", field="theta")
    counts = _stage1_counts(theta_true, config.n0, rng)
    theta_tilde, discarded = stage1_estimate(counts, config.policy, "mixed_full", config.eps_proj)
    if discarded:
        return TrialResult(theta_true, theta_tilde, None, discarded=True)
    g = _trim_roundoff(config.target(theta_tilde), helstrom(theta_tilde))
    design = design_mixed_qubit(g, theta_tilde)
    x = _allocate(design.gammas, config.n_prime, config.allocation, rng)
    eta = _frequencies(x, design.directions, theta_true, rng)
    flagged = bool(np.any(x == 0))
    if flagged:
        # an unmeasured direction falls back on the preliminary estimate
        eta = np.where(x > 0, eta, design.directions @ theta_tilde)
    theta_hat = stage2_estimate(design, eta)
    return TrialResult(theta_true, theta_tilde, theta_hat, False, flagged, x, eta)


def tangent_target(g_polar, theta_polar):
    """Polar-chart information matrix re-expressed in the unit tangent frame."""
    j_inv = np.diag([1.0, 1.0 / np.sin(theta_polar[0])])
    g = j_inv @ np.asarray(g_polar) @ j_inv
    return 0.5 * (g + g.T)


def _run_pure(config, theta_true, rng):
    bloch = polar_to_bloch(*theta_true)
    counts = _stage1_counts(bloch, config.n0, rng)
    axis, _ = stage1_estimate(counts, model_kind="pure_full")
    theta_tilde = bloch_to_polar(axis)
    # the polar chart is singular at the poles; read the target just off them
    at = np.array([np.clip(theta_tilde[0], POLE_GUARD, np.pi - POLE_GUARD), theta_tilde[1]])
    g_t = _trim_roundoff(tangent_target(config.target(at), at), np.eye(2))
    design = design_pure_qubit(g_t, polar_ket(*theta_tilde), polar_perp(*theta_tilde))
    x = _allocate(design.probs, config.n_prime, config.allocation, rng)
    dirs = design.directions
    eta = _frequencies(x, dirs, bloch, rng)
    flagged = bool(np.any(x == 0))
    eta = np.where(x > 0, eta, 0.0)
    r_hat = bloch_cap_estimate(axis, dirs, eta)
    if config.pool_stage1:
        per = config.n0 // 3
        plus = np.concatenate([counts[:, 0], np.rint((1.0 + eta) * x / 2.0)])
        totals = np.concatenate([np.full(3, per), x]).astype(float)
        r_hat = sphere_mle(r_hat, np.vstack([np.eye(3), dirs]), plus, totals)
    return TrialResult(theta_true, theta_tilde, bloch_to_polar(r_hat), False, flagged, x, eta)


def bloch_cap_estimate(axis, directions, eta):
    """Pure-state Bloch vector from tangent-plane spin means around ``axis``.

    ``r = t + sqrt(1 - |t|^2) axis`` with ``t = sum_i eta_i u_i``; a tangent
    part longer than 1 is cut back to the equator.
    """
    t = np.asarray(eta) @ np.asarray(directions)
    tn = float(np.linalg.norm(t))
    if tn >= 1.0:
        return t / tn
    return t + math.sqrt(1.0 - tn * tn) * np.asarray(axis)


def tangent_basis(r):
    """Orthonormal 3x2 basis of the plane orthogonal to unit vector ``r``."""
    x, y, z = r
    # cross product with e_x, or with e_y when r is close to e_x
    e1 = np.array([0.0, z, -y]) if abs(x) < 0.9 else np.array([-z, 0.0, x])
    e1 /= math.sqrt(e1 @ e1)
    e2 = np.array([y * e1[2] - z * e1[1], z * e1[0] - x * e1[2], x * e1[1] - y * e1[0]])
    return np.stack([e1, e2], axis=1)


def sphere_mle(r0, axes, plus, totals, max_iter=50, tol=1e-12):
    """Pure-state maximum likelihood from spin tallies, by Fisher scoring on the sphere.

    ``plus[j]`` of ``totals[j]`` outcomes were +1 along unit vector ``axes[j]``.
    """
    r = np.asarray(r0, dtype=float) / np.linalg.norm(r0)
    axes = np.asarray(axes, dtype=float)
    minus = totals - plus
    for _ in range(max_iter):
        b = tangent_basis(r)
        c = np.clip(axes @ r, -1.0 + 1e-12, 1.0 - 1e-12)
        proj = axes @ b
        score = proj.T @ (plus / (1.0 + c) - minus / (1.0 - c))
        info = (proj * (totals / (1.0 - c * c))[:, None]).T @ proj
        det = info[0, 0] * info[1, 1] - info[0, 1] * info[1, 0]
        step = np.array([info[1, 1] * score[0] - info[0, 1] * score[1],
                         info[0, 0] * score[1] - info[1, 0] * score[0]]) / det
        r = r + b @ step
        r /= np.linalg.norm(r)
        if np.linalg.norm(step) < tol:
            break
    return r


def estimation_error(theta_hat, theta_true, model_kind="mixed_full"):
    err = np.asarray(theta_hat, dtype=float) - np.asarray(theta_true, dtype=float)
    if model_kind == "pure_full":
        err[1] = (err[1] + np.pi) % (2.0 * np.pi) - np.pi
    return err


def _map_trials(fn, count, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(i) for i in range(count)]


def monte_carlo_mqe(config, theta_true, trials, threads=1):
    """Second-moment error matrix of the protocol estimated over ``trials`` runs.

    Discarded trials are excluded and reported through ``discard_rate``.
    """
    if trials < 2:
        raise ConfigError("need at least two trials", field="trials")
    results = _map_trials(lambda i: run_protocol(config, theta_true, i), trials, threads)
    kept = [r for r in results if not r.discarded]
    p = len(np.atleast_1d(theta_true))
    if len(kept) < 2:
        nan = np.full((p, p), np.nan)
        return MqeEstimate(nan, nan, trials, len(kept), 1.0 - len(kept) / trials)
    errs = np.array([estimation_error(r.theta_hat, theta_true, config.model_kind) for r in kept])
    prods = errs[:, :, None] * errs[:, None, :]
    v_hat = prods.mean(axis=0)
    stderr = prods.std(axis=0, ddof=1) / math.sqrt(len(kept))
    return MqeEstimate(
        v_hat,
        stderr,
        trials,
        len(kept),
        1.0 - len(kept) / trials,
        float(np.mean([r.flagged for r in kept])),
        errs,
    )


def standardized_errors(errors, w, n):
    """``sqrt(n) W^{-1/2} (theta_hat - theta)`` for each row of ``errors``."""
    return math.sqrt(n) * np.asarray(errors) @ matkit.inv_sqrt_psd(w).T


def skew_kurtosis(x):
    """Per-column sample skewness and excess kurtosis (moment estimators)."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=0)
    m2 = np.mean(c**2, axis=0)
    return np.mean(c**3, axis=0) / m2**1.5, np.mean(c**4, axis=0) / m2**2 - 3.0


# ---------------------------------------------------------------------------
# Covariant fidelity experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariantResult:
    n: int
    trials: int
    mean_cost: float
    stderr: float

    @property
    def reference(self):
        return 1.0 - 1.0 / self.n


def covariant_config(n, a=0.5, seed=0, allocation="deterministic"):
    """Pure-qubit protocol tuned for the fidelity cost ``cos^2(omega/2)``.

    The quadratic expansion of the cost in the polar chart is ``C = H/4``. The
    final estimate pools the stage-1 tallies into a maximum-likelihood fit,
    which recovers the copies stage 1 would otherwise waste at small N.
    """
    return ProtocolConfig(
        n=n,
        target=target_from_config({"kind": "cost_helstrom_fraction", "scale": 0.25}, "pure_full"),
        a=a,
        model_kind="pure_full",
        seed=seed,
        allocation=allocation,
        pool_stage1=True,
    )


def covariant_cost_experiment(n, trials, seed=0, a=0.5, estimator=None, threads=1):
    """Mean ``cos^2(omega/2)`` between uniformly random true and estimated directions.

    ``estimator(r_true, rng) -> r_hat`` replaces the protocol when given.
    """
    config = covariant_config(n, a, seed) if estimator is None else None

    def one(i):
        v = trial_rng(seed, i, 1).normal(size=3)
        r = v / np.linalg.norm(v)
        if estimator is not None:
            r_hat = estimator(r, trial_rng(seed, i))
        else:
            res = run_protocol(config, bloch_to_polar(r), i)
            r_hat = polar_to_bloch(*res.theta_hat)
        return 0.5 * (1.0 + float(r_hat @ r))

    costs = np.array(_map_trials(one, trials, threads))
    se = float(costs.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return CovariantResult(n, trials, float(costs.mean()), se)


# ---------------------------------------------------------------------------
# Brute-force likelihood maximization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box scanned at ``steps[0]``, then refined around the best
    point at each following step over +-2 previous steps."""

    lower: tuple
    upper: tuple
    steps: tuple = (0.02, 0.001)


def _probabilities(model, povm, points):
    m = povm.stack()
    if model.affine is not None:
        a0, ai = model.affine
        c0 = np.real(np.einsum("kij,ji->k", m, a0))
        ci = np.real(np.einsum("kij,nji->kn", m, np.array(ai)))
        return c0[None, :] + points @ ci.T
    out = np.empty((len(points), len(povm)))
    for j, t in enumerate(points):
        out[j] = np.real(np.einsum("kij,ji->k", m, model.rho_fn(t))) if model.contains(t) else -1.0
    return out


def _loglik(model, povm, counts, points):
    p = _probabilities(model, povm, points)
    used = counts > 0
    bad = np.any(p[:, used] <= 0.0, axis=1)
    if model.name == "full_mixed_qubit":
        bad |= np.einsum("ij,ij->i", points, points) >= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.log(np.where(p[:, used] > 0.0, p[:, used], 1.0)) @ counts[used]
    return np.where(bad, -np.inf, ll)


def grid_mle(model, povm, counts, grid):
    """Maximize ``sum_xi n_xi log p(xi | theta)`` over a refined grid.

    Ties go to the lowest grid index.
    """
    counts = np.asarray(counts, dtype=float)
    lower = np.asarray(grid.lower, dtype=float)
    upper = np.asarray(grid.upper, dtype=float)
    lo, hi = lower, upper
    best = None
    for level, step in enumerate(grid.steps):
        if level > 0:
            prev = grid.steps[level - 1]
            lo = np.maximum(lower, best - 2 * prev)
            hi = np.minimum(upper, best + 2 * prev)
        axes = [np.arange(l, h + step / 2, step) for l, h in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        ll = _loglik(model, povm, counts, mesh)
        best = mesh[int(np.argmax(ll))]
    return best
