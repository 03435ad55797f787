"""Command-line front end: ``qcrb {verify,design,simulate,covariant,counterexample}``.

Every command reads an optional JSON manifest and applies flag overrides on
top (flags win). Data goes out as CSV with 17 significant digits, designs as
JSON. Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a bound violated where none was expected.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import matkit
from .design import counterexample_povm, design_mixed_qubit, optimal_scaled_mqe, realize_povm
from .errors import (
    BoundaryError,
    ConfigError,
    DomainError,
    InvalidProjectorError,
    NotHermitianError,
    QcrbError,
    ShapeError,
    TargetError,
)
from .estimation import (
    ProtocolConfig,
    covariant_config,
    covariant_cost_experiment,
    helstrom,
    monte_carlo_mqe,
    target_from_config,
)
from .information import (
    fisher_information,
    gill_massar_trace,
    helstrom_bound_check,
    helstrom_matrix,
    partial_trace_bound,
)
from .quantum import (
    full_mixed_qubit,
    full_mixed_qudit,
    load_povm,
    mixed_qudit_coordinates,
    product_povm,
    pure_qudit_tangent,
    random_density,
    random_exhaustive_povm,
    random_povm,
    random_unitary,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 2, 3, 4
COMMANDS = ("verify", "design", "simulate", "covariant", "counterexample")
CHART_KINDS = {"full_mixed_qubit": "mixed_full", "pure_qubit_polar": "pure_full"}

VERIFY_HEADER = ("case_id", "d", "N", "p", "trace_value", "bound", "pass")
COVARIANT_HEADER = ("N", "mean_cost", "stderr", "one_minus_inv_N")


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass
class ExperimentManifest:
    """Everything needed to reproduce one command run."""

    command: str
    chart: str = "full_mixed_qubit"
    chart_params: dict = field(default_factory=dict)
    thetas: list = field(default_factory=list)
    povm: str = "builtin"
    n_list: list = field(default_factory=list)
    trials: int = 1000
    seed: int = 0
    policy: str = "project"
    allocation: str = "deterministic"
    a: float | None = None
    target: dict | None = None
    cases: list = field(default_factory=list)
    estimator: str | None = None
    out: str | None = None

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("manifest must be a JSON object", field="$")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError("unknown manifest key", field=key)
        if "command" not in doc:
            raise ConfigError("missing", field="command")
        m = cls(**doc)
        m.validate()
        return m

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc.msg})", field="$") from exc
        return cls.from_dict(doc)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"must be one of {COMMANDS}", field="command")
        if not isinstance(self.trials, int) or isinstance(self.trials, bool) or self.trials < 0:
            raise ConfigError("must be a non-negative integer", field="trials")
        if not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", field="seed")
        for i, n in enumerate(self.n_list):
            if not isinstance(n, int) or n < 1:
                raise ConfigError("must be a positive integer", field=f"n_list[{i}]")
        for i, t in enumerate(self.thetas):
            if not isinstance(t, list) or not all(isinstance(x, (int, float)) for x in t):
                raise ConfigError("must be a list of numbers", field=f"thetas[{i}]")
        if self.policy not in ("project", "discard"):
            raise ConfigError("must be 'project' or 'discard'", field="policy")
        if self.allocation not in ("deterministic", "multinomial"):
            raise ConfigError("must be 'deterministic' or 'multinomial'", field="allocation")
        if self.a is not None and not 0.0 < self.a < 1.0:
            raise ConfigError("must lie in (0, 1)", field="a")


def _write_csv(header, rows, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    _emit(buf.getvalue(), out)


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

DEFAULT_CASES = [
    {"kind": "mixed", "d": 2, "n": 1, "count": 100},
    {"kind": "pure", "d": 3, "n": 2, "count": 10},
    {"kind": "product", "count": 20},
    {"kind": "helstrom", "d": 3, "count": 20},
    {"kind": "partial_trace", "count": 5},
    {"kind": "counterexample"},
]


def _case_rows(case, rng):
    kind = case.get("kind")
    count = int(case.get("count", 1))
    d = int(case.get("d", 2))
    n = int(case.get("n", 1))
    if kind == "mixed":
        if n != 1:
            raise ConfigError("mixed equality cases are single-copy", field="cases.n")
        model = full_mixed_qudit(d)
        for i in range(count):
            theta = mixed_qudit_coordinates(random_density(d, rng))
            povm = random_exhaustive_povm(d, d + 2, rng)
            tr = gill_massar_trace(helstrom_matrix(model, theta), fisher_information(povm, model, theta))
            yield f"mixed-{d}-{i}", d, 1, model.nparams, tr, float(d - 1), abs(tr - (d - 1)) <= 1e-8
    elif kind == "pure":
        for i in range(count):
            model = pure_qudit_tangent(d, random_unitary(d, rng))
            theta = np.zeros(model.nparams)
            povm = random_exhaustive_povm(d**n, d**n + 1, rng)
            fi = fisher_information(povm, model, theta, n)
            tr = gill_massar_trace(helstrom_matrix(model, theta), fi)
            bound = float(n * (d - 1))
            yield f"pure-{d}-{n}-{i}", d, n, model.nparams, tr, bound, abs(tr - bound) <= 1e-8
    elif kind == "product":
        model = full_mixed_qubit()
        for i in range(count):
            theta = mixed_qudit_coordinates(random_density(2, rng))
            povm = product_povm([random_exhaustive_povm(2, 3, rng) for _ in range(2)])
            fi = fisher_information(povm, model, theta, 2)
            tr = gill_massar_trace(helstrom_matrix(model, theta), fi)
            yield f"product-{i}", 2, 2, 3, tr, 2.0, tr <= 2.0 + 1e-9
    elif kind == "helstrom":
        model = full_mixed_qudit(d)
        for i in range(count):
            theta = mixed_qudit_coordinates(random_density(d, rng))
            povm = random_povm(d, d + 1, rng)
            h = helstrom_matrix(model, theta)
            fi = fisher_information(povm, model, theta)
            holds, _ = helstrom_bound_check(fi, h)
            yield f"helstrom-{d}-{i}", d, 1, model.nparams, gill_massar_trace(h, fi), float(model.nparams), holds
    elif kind == "partial_trace":
        # qutrit whose parameters 0, 3, 6 move rho only inside span{|0>, |1>}
        model = full_mixed_qudit(3)
        pi = np.diag([1.0, 1.0, 0.0]).astype(complex)
        for i in range(count):
            block = random_density(2, rng) * 0.7
            rho = np.zeros((3, 3), complex)
            rho[:2, :2] = block
            rho[2, 2] = 0.3
            theta = mixed_qudit_coordinates(rho)
            res = partial_trace_bound(model, theta, [0, 3, 6], pi, random_povm(3, 4, rng))
            yield f"partial-{i}", 3, 1, 3, res.lhs, res.bound, res.holds
    elif kind == "counterexample":
        model = full_mixed_qubit()
        fi = fisher_information(counterexample_povm(), model, np.zeros(3), 2)
        tr = gill_massar_trace(helstrom_matrix(model, np.zeros(3)), fi)
        yield "counterexample", 2, 2, 3, tr, 2.0, "violation-expected"
    else:
        raise ConfigError(f"unknown case kind {kind!r}", field="cases.kind")


def cmd_verify(m, threads=1):
    rng = np.random.default_rng(m.seed)
    rows = []
    for case in m.cases or DEFAULT_CASES:
        rows.extend(_case_rows(case, rng))
    _write_csv(VERIFY_HEADER, rows, m.out)
    failed = [r for r in rows if r[-1] is False or r[-1] is np.False_]
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_counterexample(m, threads=1):
    rows = list(_case_rows({"kind": "counterexample"}, None))
    _write_csv(VERIFY_HEADER, rows, m.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------


def cmd_design(m, threads=1):
    if m.chart != "full_mixed_qubit":
        raise ConfigError("design supports the full_mixed_qubit chart", field="chart")
    if not m.thetas:
        raise ConfigError("a design point is required", field="thetas")
    if m.target is None:
        raise ConfigError("a target is required", field="target")
    theta0 = np.asarray(m.thetas[0], dtype=float)
    if theta0.shape != (3,):
        raise ConfigError("must have three components", field="thetas[0]")
    h = helstrom(theta0)
    min_cost = None
    kind = m.target.get("kind") if isinstance(m.target, dict) else None
    if kind in ("cost_constant", "cost_helstrom_fraction"):
        try:
            c = (np.asarray(m.target["C"], float) if kind == "cost_constant"
                 else float(m.target["scale"]) * h)
            c = matkit.symmetric(c)
        except (KeyError, TypeError, ValueError, NotHermitianError) as exc:
            raise ConfigError(f"malformed cost ({exc})", field="target") from exc
        w, min_cost = optimal_scaled_mqe(c, h, 2)
        g = matkit.inv_psd(w)
    else:
        g = target_from_config(m.target)(theta0)
    design = design_mixed_qubit(g, theta0)
    fi = fisher_information(realize_povm(design), full_mixed_qubit(), theta0)
    deviation = float(np.max(np.abs(fi - g)))
    doc = design.to_json()
    doc["target"] = g.tolist()
    if min_cost is not None:
        doc["min_cost"] = min_cost
    doc["fisher_deviation"] = deviation
    _emit(json.dumps(doc, indent=1) + "\n", m.out)
    report = f"realized Fisher deviation: {fmt(deviation)}"
    if min_cost is not None:
        report += f"\nmin_cost: {fmt(min_cost)}"
    print(report, file=sys.stderr if not m.out else sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / covariant
# ---------------------------------------------------------------------------


def simulate_header(p):
    idx = [f"{i + 1}{j + 1}" for i in range(p) for j in range(p)]
    return (
        ["N", "trial_count", "theta_true", "policy", "a"]
        + [f"nv_{k}" for k in idx]
        + [f"stderr_{k}" for k in idx]
        + ["discard_rate", "trace_bound", "rel_dev"]
    )


def cmd_simulate(m, threads=1):
    if m.trials < 2:
        raise ConfigError("simulation needs at least 2 trials", field="trials")
    if not m.n_list:
        raise ConfigError("at least one N is required", field="n_list")
    if not m.thetas:
        raise ConfigError("at least one theta is required", field="thetas")
    model_kind = CHART_KINDS.get(m.chart)
    if model_kind is None:
        raise ConfigError(f"simulate supports {sorted(CHART_KINDS)}", field="chart")
    target = target_from_config(m.target or {"kind": "helstrom_fraction", "scale": 1 / 3}, model_kind)
    a = 0.7 if m.a is None else m.a
    p = 3 if model_kind == "mixed_full" else 2
    rows, violation = [], False
    for theta in m.thetas:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (p,):
            raise ConfigError(f"must have {p} components", field="thetas")
        w = matkit.inv_psd(target(theta))
        h_inv = matkit.inv_psd(helstrom(theta, model_kind))
        for n in m.n_list:
            cfg = ProtocolConfig(n=n, target=target, a=a, policy=m.policy, model_kind=model_kind,
                                 seed=m.seed, allocation=m.allocation)
            est = monte_carlo_mqe(cfg, theta, m.trials, threads)
            nv = n * est.v_hat
            try:
                trace = float(np.trace(h_inv @ matkit.inv_psd(nv)))
            except matkit.SingularMatrixError:
                trace = float("nan")
            violation |= trace > 1.05
            rel = float(np.linalg.norm(nv - w) / np.linalg.norm(w))
            rows.append(
                [n, m.trials, ";".join(fmt(x) for x in theta), m.policy, a]
                + list(nv.ravel())
                + list(n * est.stderr.ravel())
                + [est.discard_rate, trace, rel]
            )
    _write_csv(simulate_header(p), rows, m.out)
    return EXIT_VIOLATION if violation else EXIT_OK


_STUBS = {
    "perfect": lambda r, rng: r,
    "antipodal": lambda r, rng: -r,
}


def cmd_covariant(m, threads=1):
    if m.trials < 2:
        raise ConfigError("needs at least 2 trials", field="trials")
    if not m.n_list:
        raise ConfigError("at least one N is required", field="n_list")
    if m.estimator is not None and m.estimator not in _STUBS:
        raise ConfigError(f"must be one of {sorted(_STUBS)}", field="estimator")
    a = 0.5 if m.a is None else m.a
    rows = []
    for n in m.n_list:
        if m.estimator is None:
            covariant_config(n, a, m.seed)  # validates N against a
        res = covariant_cost_experiment(n, m.trials, m.seed, a, _STUBS.get(m.estimator), threads)
        rows.append([n, res.mean_cost, res.stderr, res.reference])
    _write_csv(COVARIANT_HEADER, rows, m.out)
    return EXIT_OK


HANDLERS = {
    "verify": cmd_verify,
    "design": cmd_design,
    "simulate": cmd_simulate,
    "covariant": cmd_covariant,
    "counterexample": cmd_counterexample,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="qcrb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--manifest", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--threads", type=int)
        p.add_argument("--policy", choices=("project", "discard"))
        p.add_argument("--allocation", choices=("deterministic", "multinomial"))
        p.add_argument("--trials", type=int)
        p.add_argument("--n-list", type=int, nargs="+", dest="n_list", metavar="N")
    return parser


def load_manifest(args):
    if args.manifest:
        try:
            with open(args.manifest) as fh:
                m = ExperimentManifest.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read manifest ({exc.strerror})", field="--manifest") from exc
        if m.command != args.command:
            raise ConfigError(f"manifest is for {m.command!r}", field="command")
    else:
        m = ExperimentManifest(command=args.command)
    for name in ("seed", "out", "policy", "allocation", "trials", "n_list"):
        value = getattr(args, name)
        if value is not None:
            setattr(m, name, value)
    m.validate()
    return m


def resolve_threads(flag):
    if flag is not None:
        threads = flag
    else:
        env = os.environ.get("QCRB_THREADS", "1")
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError("must be an integer", field="QCRB_THREADS") from None
    if threads < 1:
        raise ConfigError("must be at least 1", field="--threads")
    return threads


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        m = load_manifest(args)
        return HANDLERS[m.command](m, resolve_threads(args.threads))
    except (ConfigError, TargetError, BoundaryError, DomainError, ShapeError,
            InvalidProjectorError, NotHermitianError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QcrbError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
