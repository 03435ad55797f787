import math

import numpy as np
import pytest

from qcrb import estimation as est
from qcrb.design import MixedQubitDesign, design_mixed_qubit, realize_povm
from qcrb.errors import ConfigError, InsufficientDataError, RankDeficientDesignError
from qcrb.estimation import (
    GridSpec,
    ProtocolConfig,
    conditional_mqe,
    covariant_cost_experiment,
    grid_mle,
    monte_carlo_mqe,
    run_protocol,
    stage1_estimate,
    stage2_estimate,
    stage2_matrix,
)
from qcrb.information import helstrom_matrix
from qcrb.quantum import full_mixed_qubit, pauli_povm, polar_to_bloch, random_bloch

MIXED = full_mixed_qubit()
THIRD = est.helstrom_fraction(1 / 3)


def h_at(theta):
    return helstrom_matrix(MIXED, theta)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------


def test_stage1_plug_in():
    theta = np.array([0.2, -0.4, 0.6])
    n = 1000
    plus = n * (1 + theta) / 2
    counts = np.stack([plus, n - plus], axis=1)
    t, discarded = stage1_estimate(counts)
    assert np.allclose(t, theta) and not discarded


def test_stage1_out_of_ball():
    counts = [[5, 0], [5, 0], [5, 0]]
    t, discarded = stage1_estimate(counts)
    assert not discarded and np.linalg.norm(t) == pytest.approx(1 - 1e-6)
    assert np.allclose(t / np.linalg.norm(t), np.ones(3) / np.sqrt(3))
    t, discarded = stage1_estimate(counts, policy="discard")
    assert discarded and np.allclose(t, 1)
    t, _ = stage1_estimate([[3, 1], [2, 2], [2, 2]], model_kind="pure_full")
    assert np.allclose(t, [1, 0, 0])


def test_stage1_zero_tally():
    with pytest.raises(InsufficientDataError):
        stage1_estimate([[0, 0], [1, 1], [1, 1]])


def test_stage1_unbiased():
    theta = np.array([0.2, -0.1, 0.4])
    rng = np.random.default_rng(0)
    per = 50
    plus = rng.binomial(per, (1 + theta) / 2, size=(10**4, 3))
    r = np.array([stage1_estimate(np.stack([p, per - p], 1))[0] for p in plus])
    se = r.std(axis=0, ddof=1) / 100
    assert np.all(np.abs(r.mean(axis=0) - theta) <= 4 * se)


# ---------------------------------------------------------------------------
# stage 2 and the conditional error matrix
# ---------------------------------------------------------------------------


def test_stage2_noiseless(rng):
    for _ in range(20):
        theta0 = random_bloch(rng, 0.8)
        theta = theta0 + rng.normal(scale=0.05, size=3)
        d = design_mixed_qubit(h_at(theta0) / 3, theta0)
        assert np.abs(stage2_estimate(d, d.directions @ theta) - theta).max() <= 1e-10


def test_stage2_identity_chart():
    d = MixedQubitDesign(np.zeros(3), np.full(3, 1 / 3), np.eye(3), np.eye(3))
    eta = np.array([0.3, -0.2, 0.1])
    assert np.allclose(stage2_estimate(d, eta), eta)
    out = stage2_estimate(d, [1.0, 1.0, 0.0])
    assert np.linalg.norm(out) == pytest.approx(1.0)


def test_stage2_rank_deficient():
    d = MixedQubitDesign(np.zeros(3), np.array([0.5, 0.5, 0.0]), np.eye(3), np.eye(3))
    with pytest.raises(RankDeficientDesignError):
        stage2_estimate(d, np.zeros(3))
    with pytest.raises(RankDeficientDesignError):
        conditional_mqe(d, np.zeros(3), 100)


def test_conditional_mqe_examples(rng):
    d = design_mixed_qubit(np.eye(3) / 3, np.zeros(3))
    assert np.allclose(conditional_mqe(d, np.zeros(3), 50), 3 * np.eye(3) / 50)
    for _ in range(10):
        theta0 = random_bloch(rng, 0.9)
        h = h_at(theta0)
        g = h / 3 + 0.05 * np.diag(rng.uniform(size=3))
        g *= 0.9 / np.trace(np.linalg.inv(h) @ g)
        d = design_mixed_qubit(g, theta0)
        assert np.allclose(conditional_mqe(d, theta0, 1000), np.linalg.inv(g) / 1000)


def simulate_stage2(design, theta0, n_prime, trials, rng):
    x = np.floor(design.gammas * n_prime + 1e-9).astype(int)
    p = (1 + design.directions @ theta0) / 2
    k = rng.binomial(x, p, size=(trials, 3))
    eta = 2 * k / x - 1
    thetas = eta @ stage2_matrix(design).T
    norms = np.linalg.norm(thetas, axis=1, keepdims=True)
    thetas = np.where(norms > 1, thetas / norms, thetas)
    err = thetas - theta0
    prods = err[:, :, None] * err[:, None, :]
    return prods.mean(axis=0), prods.std(axis=0, ddof=1) / math.sqrt(trials)


def test_conditional_mqe_monte_carlo():
    rng = np.random.default_rng(11)
    theta_tilde = np.array([0.1, 0.3, -0.2])
    theta0 = theta_tilde + np.array([0.05, -0.04, 0.06])
    d = design_mixed_qubit(h_at(theta_tilde) / 3, theta_tilde)
    n_prime = 3000
    v, se = simulate_stage2(d, theta0, n_prime, 10**5, rng)
    # exact only with X_i = gamma_i N', so feed the formula the realized X_i
    x = np.floor(d.gammas * n_prime + 1e-9)
    scaled = MixedQubitDesign(d.theta0, x / n_prime, d.directions, d.eigvecs)
    expect = conditional_mqe(scaled, theta0, n_prime)
    assert np.all(np.abs(v - expect) <= 3 * se + 1e-15)


# ---------------------------------------------------------------------------
# grid MLE oracle
# ---------------------------------------------------------------------------

BOX = GridSpec((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5), (0.05, 0.001))


def test_grid_mle_flat_likelihood():
    from qcrb.quantum import Povm
    from qcrb.matkit import I2

    best = grid_mle(MIXED, Povm((I2,)), [10], BOX)
    assert np.allclose(best, BOX.lower)


def test_grid_mle_z_only():
    best = grid_mle(MIXED, pauli_povm("z"), [700, 300], BOX)
    assert best[2] == pytest.approx(0.4, abs=1e-3)


def test_grid_mle_matches_stage2():
    rng = np.random.default_rng(5)
    grid = GridSpec((-1, -1, -1), (1, 1, 1), (0.02, 0.001))
    for _ in range(20):
        theta_tilde = random_bloch(rng, 0.6)
        theta0 = theta_tilde + rng.normal(scale=0.02, size=3)
        d = design_mixed_qubit(h_at(theta_tilde) / 3, theta_tilde)
        x = np.floor(d.gammas * 2000).astype(int)
        k = rng.binomial(x, (1 + d.directions @ theta0) / 2)
        counts = np.ravel(np.stack([k, x - k], axis=1))
        povm = realize_povm(d)
        if len(povm) == 7:
            counts = np.append(counts, 0)
        theta_hat = stage2_estimate(d, 2 * k / x - 1)
        assert np.abs(grid_mle(MIXED, povm, counts, grid) - theta_hat).max() <= 2e-3


# ---------------------------------------------------------------------------
# protocol runs
# ---------------------------------------------------------------------------


def test_protocol_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(n=100, target=THIRD, a=1.0)
    with pytest.raises(ConfigError):
        ProtocolConfig(n=100, target=THIRD, policy="keep")
    with pytest.raises(ConfigError):
        ProtocolConfig(n=100, target=None)
    with pytest.raises(ConfigError):
        ProtocolConfig(n=5, target=THIRD, a=0.9)
    cfg = ProtocolConfig(n=10**4, target=THIRD)
    assert cfg.n0 % 3 == 0 and cfg.n0 >= 10**4**0.7 and cfg.n_prime == 10**4 - cfg.n0


def test_run_protocol_deterministic():
    cfg = ProtocolConfig(n=10, target=THIRD, a=0.5, seed=42)
    a = run_protocol(cfg, [0.1, 0.2, 0.3], 3)
    b = run_protocol(cfg, [0.1, 0.2, 0.3], 3)
    assert np.array_equal(a.theta_hat, b.theta_hat) and np.array_equal(a.counts, b.counts)
    assert np.linalg.norm(a.theta_hat) <= 1
    c = run_protocol(cfg, [0.1, 0.2, 0.3], 4)
    assert not np.array_equal(a.counts, c.counts) or not np.array_equal(a.eta_hat, c.eta_hat)


def test_noiseless_composition():
    theta = np.array([0.3, -0.2, 0.5])
    per = 300
    plus = per * (1 + theta) / 2
    t, _ = stage1_estimate(np.stack([plus, per - plus], 1))
    d = design_mixed_qubit(THIRD(t), t)
    assert np.allclose(stage2_estimate(d, d.directions @ theta), theta)


@pytest.mark.slow
def test_protocol_unbiased_at_large_n():
    theta = np.array([0.1, -0.3, 0.4])
    cfg = ProtocolConfig(n=10**4, target=THIRD, seed=3)
    res = monte_carlo_mqe(cfg, theta, 10**4)
    mean = res.errors.mean(axis=0)
    se = res.errors.std(axis=0, ddof=1) / math.sqrt(len(res.errors))
    assert np.all(np.abs(mean) <= 4 * se)


def test_monte_carlo_zero_error(monkeypatch):
    theta = np.array([0.0, 0.1, 0.2])

    def exact(config, theta_true, trial_index=0):
        return est.TrialResult(theta_true, theta_true, np.array(theta_true, float))

    monkeypatch.setattr(est, "run_protocol", exact)
    res = monte_carlo_mqe(ProtocolConfig(n=100, target=THIRD), theta, 5)
    assert np.array_equal(res.v_hat, np.zeros((3, 3))) and res.discard_rate == 0


def test_monte_carlo_needs_two_trials():
    with pytest.raises(ConfigError):
        monte_carlo_mqe(ProtocolConfig(n=100, target=THIRD), np.zeros(3), 1)


def test_monte_carlo_deterministic_and_thread_independent():
    cfg = ProtocolConfig(n=500, target=THIRD, seed=9)
    theta = np.array([0.2, 0.0, -0.3])
    a = monte_carlo_mqe(cfg, theta, 200)
    b = monte_carlo_mqe(cfg, theta, 200, threads=3)
    assert np.array_equal(a.v_hat, b.v_hat) and np.array_equal(a.stderr, b.stderr)
    assert np.linalg.eigvalsh(a.v_hat).min() >= -1e-10


@pytest.mark.slow
def test_halving_with_doubled_n():
    theta = np.array([0.0, 0.0, 0.5])
    tr = []
    for n in (10**4, 2 * 10**4):
        tr.append(np.trace(monte_carlo_mqe(ProtocolConfig(n=n, target=THIRD, seed=1), theta, 10**4).v_hat))
    assert 0.4 <= tr[1] / tr[0] <= 0.6


def test_discard_rate_small():
    cfg = ProtocolConfig(n=10**4, target=THIRD, policy="discard", seed=2)
    res = monte_carlo_mqe(cfg, np.array([0.0, 0.48, 0.64]), 2000)
    assert res.discard_rate < 0.01


def test_discard_policy_excludes_trials():
    cfg = ProtocolConfig(n=40, target=THIRD, a=0.5, policy="discard", seed=0)
    res = monte_carlo_mqe(cfg, np.array([0.0, 0.0, 0.95]), 400)
    assert 0 < res.discard_rate < 1 and res.used == round(400 * (1 - res.discard_rate))


def test_multinomial_allocation_flags():
    cfg = ProtocolConfig(n=20, target=THIRD, a=0.5, allocation="multinomial", seed=4)
    res = monte_carlo_mqe(cfg, np.array([0.1, 0.1, 0.1]), 300)
    assert 0 < res.flagged_rate < 1
    assert np.all(np.isfinite(res.v_hat))


def test_pure_protocol_runs_and_wraps():
    cfg = est.covariant_config(500, seed=1)
    theta = np.array([1.0, np.pi - 0.01])
    res = monte_carlo_mqe(cfg, theta, 200)
    assert np.all(np.abs(res.errors[:, 1]) <= np.pi)
    assert res.v_hat.shape == (2, 2)


def test_pure_protocol_near_pole():
    cfg = est.covariant_config(60, seed=0)
    for i in range(50):
        r = run_protocol(cfg, [0.02, 0.3], i)
        assert np.all(np.isfinite(r.theta_hat))


def test_sphere_mle_noiseless(rng):
    for _ in range(10):
        v = rng.normal(size=3)
        r = v / np.linalg.norm(v)
        axes = np.vstack([np.eye(3), est.tangent_basis(r).T])
        totals = np.full(5, 1000.0)
        plus = totals * (1 + axes @ r) / 2
        start = r + 0.1 * rng.normal(size=3)
        assert np.allclose(est.sphere_mle(start, axes, plus, totals), r, atol=1e-9)


def test_bloch_cap_estimate():
    axis = np.array([0.0, 0.0, 1.0])
    dirs = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    assert np.allclose(est.bloch_cap_estimate(axis, dirs, [0.6, 0.0]), [0.6, 0, 0.8])
    assert np.allclose(est.bloch_cap_estimate(axis, dirs, [1.2, 0.0]), [1, 0, 0])


def test_tangent_target():
    eta = 0.8
    h = helstrom_matrix(est._POLAR, [eta, 0.1])
    assert np.allclose(est.tangent_target(h / 2, [eta, 0.1]), np.eye(2) / 2)


def test_covariant_stubs():
    perfect = covariant_cost_experiment(100, 50, estimator=lambda r, rng: r)
    assert perfect.mean_cost == pytest.approx(1.0, abs=1e-15)
    anti = covariant_cost_experiment(100, 50, estimator=lambda r, rng: -r)
    assert anti.mean_cost == pytest.approx(0.0, abs=1e-15)
    assert perfect.reference == pytest.approx(0.99)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


def test_target_validation():
    est.validate_target_function(THIRD, samples=200)
    est.validate_target_function(est.whitened_target(np.diag([0.5, 0.3, 0.2])), samples=200)
    est.validate_target_function(est.constant_target(np.eye(3) / 3), samples=200)
    with pytest.raises(ConfigError):
        est.validate_target_function(est.helstrom_fraction(0.5), samples=50)
    with pytest.raises(ConfigError):
        est.validate_target_function(est.constant_target(np.diag([0.5, 0.0, 0.0])), samples=50)
    pure = est.target_from_config({"kind": "cost_helstrom_fraction", "scale": 0.25}, "pure_full")
    est.validate_target_function(pure, "pure_full", samples=200)
    th = np.array([1.1, 0.4])
    assert np.allclose(pure(th), helstrom_matrix(est._POLAR, th) / 2)


def test_target_from_config_errors():
    with pytest.raises(ConfigError):
        est.target_from_config({"kind": "unknown"})
    with pytest.raises(ConfigError):
        est.target_from_config({"kind": "constant"})
    with pytest.raises(ConfigError):
        est.target_from_config({"kind": "constant", "G": [[1, 2], [0, 1]]})
    c = est.target_from_config({"kind": "cost_constant", "C": np.eye(3).tolist()})
    assert np.trace(np.linalg.inv(h_at(np.zeros(3))) @ c(np.zeros(3))) == pytest.approx(1)


def test_normality_helpers(rng):
    x = rng.normal(size=(20000, 2))
    s, k = est.skew_kurtosis(x)
    assert np.all(np.abs(s) < 0.1) and np.all(np.abs(k) < 0.2)
    w = np.array([[2.0, 0.5], [0.5, 1.0]])
    errs = rng.multivariate_normal(np.zeros(2), w / 100, size=20000)
    z = est.standardized_errors(errs, w, 100)
    assert np.allclose(np.cov(z.T), np.eye(2), atol=0.05)
