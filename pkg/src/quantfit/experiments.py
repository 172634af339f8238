"""Experiment harness: configs, result CSVs, and the five run kinds.

Every run kind produces a list of ResultRow and is deterministic given the
config seeds: per-cell generators are derived from (seed, cell indices), and
wall-clock times live in a separate timing sidecar so the result CSV stays
byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .agents import AGENT_KINDS, AgentConfig, TrainingDivergedError, train_agent, evaluate_policy
from .distributions import QuantileFunction, named_distribution
from .envs import ToyMDP, load_mdp, named_mdp, true_return_distribution
from .fractions import OptimizerState, optimize_fractions
from .quadrature import adaptive_simpson
from .staircase import (
    FractionSet,
    StaircaseApproximation,
    optimal_values,
    random_fraction_set,
    w1_error,
    w1_fraction_gradient,
)
from .valuenet import QuantileValueNet, save_arrays, load_arrays

SCHEMA_VERSION = 1
RESULT_HEADER = ("experiment", "seed", "step", "metric", "value")
TIMING_HEADER = ("experiment", "seed", "step", "metric", "wall_ms")
EXPERIMENT_KINDS = ("approx", "gradcheck", "optimize", "train", "sweep")
GRADCHECK_TOL = 1e-4

# the fixed benchmark targets; smooth subset used where differentiation
# against finite differences requires a continuous quantile curve
SUITE = ("two_point", "three_point", "uniform", "gaussian", "exponential")
SMOOTH_SUITE = ("uniform", "gaussian", "exponential")


# ---------------------------------------------------------------------------
# Rows and CSV plumbing


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    step: int
    metric: str
    value: float
    wall_ms: float = 0.0


def format_value(value: float) -> str:
    """Finite values in 12-digit shortest form; anything else is "nan"."""
    v = float(value)
    if not math.isfinite(v):
        return "nan"
    return f"{v:.12g}"


def write_result_csv(path: str, rows: list[ResultRow]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RESULT_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r.experiment},{r.seed},{r.step},{r.metric},{format_value(r.value)}\n")
    return path

def write_timing_csv(path: str, rows: list[ResultRow]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TIMING_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r.experiment},{r.seed},{r.step},{r.metric},{r.wall_ms:.3f}\n")
    return path


def read_result_csv(path: str) -> list[ResultRow]:
    """Parse a result CSV back into rows; validates the header."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RESULT_HEADER:
            raise ValueError(f"unexpected result header {header!r}")
        return [
            ResultRow(rec[0], int(rec[1]), int(rec[2]), rec[3], float(rec[4]))
            for rec in reader
        ]


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    kind: str
    distributions: tuple[str, ...] = SUITE
    environment: str = "single_loop"
    n_values: tuple[int, ...] = (4, 8, 32)
    seeds: tuple[int, ...] = (0,)
    optimize_steps: int = 2000
    train_updates: int = 2000
    record_every: int = 200
    eval_episodes: int = 32
    n_random: int = 100
    probe_draws: int = 512
    entropy_coeff: float = 0.0
    gradcheck_pairs: int = 100
    gradcheck_params: int = 200
    sign_flip_bug: bool = False  # negative-control hook for the audit tests
    zero_net: bool = False
    agent: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    agent_kinds: tuple[str, ...] = AGENT_KINDS
    out_dir: str = "."
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version!r}")
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            # per-cell generators are seeded with [seed, indices] sequences,
            # which reject negative entries
            raise ValueError("seeds must be non-negative")
        self.n_values = tuple(int(n) for n in self.n_values)
        if any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive")
        self.distributions = tuple(self.distributions)
        self.agent_kinds = tuple(self.agent_kinds)
        for kind in self.agent_kinds:
            if kind not in AGENT_KINDS:
                raise ValueError(f"unknown agent kind {kind!r}")
        for budget in ("optimize_steps", "train_updates", "record_every",
                       "eval_episodes", "gradcheck_pairs", "gradcheck_params"):
            if getattr(self, budget) < 1:
                raise ValueError(f"{budget} must be positive")
        _check_override_keys(self.agent, AgentConfig, "agent")
        _check_override_keys(self.optimizer, OptimizerState, "optimizer")


def _check_override_keys(overrides: dict, cls, label: str) -> None:
    allowed = {f.name for f in fields(cls)}
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(f"unknown {label} fields: {sorted(unknown)}")


def config_from_dict(spec: dict, kind: str | None = None) -> ExperimentConfig:
    if not isinstance(spec, dict):
        raise ValueError("experiment config must be a mapping")
    spec = dict(spec)
    if kind is not None:
        declared = spec.setdefault("kind", kind)
        if declared != kind:
            raise ValueError(f"config kind {declared!r} does not match command {kind!r}")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**spec)


def load_config(path: str, kind: str | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(f"config is not valid JSON: {err}") from None
    return config_from_dict(spec, kind=kind)


def resolve_environment(name_or_path: str) -> ToyMDP:
    """A registry name, or a path to a declarative environment JSON."""
    if name_or_path.endswith(".json") or os.sep in name_or_path:
        return load_mdp(name_or_path)
    return named_mdp(name_or_path)


def worker_count() -> int:
    """Pool width for sweeps; the QF_THREADS env var caps it."""
    limit = os.environ.get("QF_THREADS", "")
    if limit:
        try:
            cap = int(limit)
        except ValueError:
            raise ValueError(f"QF_THREADS must be an integer, got {limit!r}") from None
        if cap < 1:
            raise ValueError("QF_THREADS must be >= 1")
        return cap
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# approx: staircase quality of three fraction schemes


def run_approx(config: ExperimentConfig) -> list[ResultRow]:
    rows: list[ResultRow] = []
    targets = [(name, named_distribution(name)) for name in config.distributions]
    for d_idx, (name, qf) in enumerate(targets):
        exp_id = f"approx/{name}"
        for n in config.n_values:
            for seed in config.seeds:
                t0 = time.perf_counter()
                rng = np.random.default_rng([seed, d_idx, n])
                schemes: dict[str, float] = {}
                if n == 1:
                    # one segment has no free fractions; all schemes coincide
                    base = w1_error(qf, optimal_values(qf, FractionSet(())), tol=1e-10)
                    schemes = {k: base for k in ("optimized", "equally_spaced", "random_mean")}
                else:
                    opt_fr, _ = optimize_fractions(
                        qf,
                        n,
                        steps=config.optimize_steps,
                        entropy_coeff=config.entropy_coeff,
                        trace_every=10 * config.optimize_steps,
                    )
                    schemes["optimized"] = w1_error(qf, optimal_values(qf, opt_fr), tol=1e-10)
                    eq = FractionSet.equally_spaced(n)
                    schemes["equally_spaced"] = w1_error(qf, optimal_values(qf, eq), tol=1e-10)
                    draws = [
                        w1_error(qf, optimal_values(qf, random_fraction_set(n, rng)))
                        for _ in range(config.n_random)
                    ]
                    schemes["random_mean"] = float(np.mean(draws))
                ms = (time.perf_counter() - t0) * 1000.0
                for scheme, value in schemes.items():
                    rows.append(ResultRow(exp_id, seed, n, f"w1_{scheme}", value, ms))
    return rows


# ---------------------------------------------------------------------------
# gradcheck: the two finite-difference audits


def _smooth_w1(qf: QuantileFunction, fr: FractionSet, tol: float = 1e-11) -> float:
    """W1 with midpoint values, each segment split at its midpoint.

    Monotonicity puts the integrand's only kink at the midpoint, so both
    halves are smooth and Simpson converges at machine speed. Used as the
    differentiation target for the fraction-gradient audit.
    """
    b = fr.boundaries
    mids = fr.midpoints
    total = 0.0
    for i in range(fr.n_segments):
        theta = qf.evaluate(mids[i])
        total += adaptive_simpson(lambda w: theta - qf.evaluate(w), b[i], mids[i], tol=tol)
        total += adaptive_simpson(lambda w: qf.evaluate(w) - theta, mids[i], b[i + 1], tol=tol)
    return total


def _audit_fraction_set(rng: np.random.Generator, h: float) -> FractionSet:
    # resample until every gap clears the FD stencil
    while True:
        n = int(rng.integers(2, 9))
        fr = random_fraction_set(n, rng)
        if np.min(np.diff(fr.boundaries)) > 4.0 * h:
            return fr


def fraction_gradient_audit(
    n_pairs: int, seed: int, sign_flip: bool = False, h: float = 1e-5
) -> list[ResultRow]:
    """Analytic dW1/dtau against central differences, one row per pair."""
    rng = np.random.default_rng([seed, 1])
    rows = []
    for pair in range(n_pairs):
        t0 = time.perf_counter()
        name = SMOOTH_SUITE[int(rng.integers(len(SMOOTH_SUITE)))]
        qf = named_distribution(name)
        fr = _audit_fraction_set(rng, h)
        grad = w1_fraction_gradient(qf, fr)
        if sign_flip:
            grad = -grad
        worst = 0.0
        interior = np.array(fr.interior)
        for k in range(interior.size):
            plus = interior.copy()
            minus = interior.copy()
            plus[k] += h
            minus[k] -= h
            fd = (
                _smooth_w1(qf, FractionSet(tuple(plus)))
                - _smooth_w1(qf, FractionSet(tuple(minus)))
            ) / (2.0 * h)
            rel = abs(grad[k] - fd) / max(abs(grad[k]), abs(fd), 1e-3)
            worst = max(worst, rel)
        ms = (time.perf_counter() - t0) * 1000.0
        rows.append(ResultRow("gradcheck/fraction", seed, pair, "max_rel_err", worst, ms))
    return rows


def _net_loss(net: QuantileValueNet, states, taus, actions, targets, kappa: float):
    """Quantile-regression loss through the net, with parameter gradients."""
    b, k = taus.shape
    out, record = net.forward_batch(states, taus)
    current = out[np.arange(b), :, actions]
    delta = targets[:, :, None] - current[:, None, :]
    abs_d = np.abs(delta)
    huber = np.where(abs_d <= kappa, 0.5 * delta * delta, kappa * (abs_d - 0.5 * kappa))
    weight = np.abs(taus[:, None, :] - (delta < 0.0))
    loss = float(np.sum(weight * huber) / (kappa * k * b))
    dldd = weight * np.clip(delta, -kappa, kappa) / (kappa * k * b)
    upstream = np.zeros_like(out)
    upstream[np.arange(b), :, actions] = -dldd.sum(axis=1)
    grads = net.backward(record, upstream)
    masks = (record.pre_encoder > 0.0, record.pre_embed > 0.0)
    return loss, grads, masks


def backprop_audit(
    n_params: int,
    seed: int,
    sign_flip: bool = False,
    zero_net: bool = False,
    h: float = 1e-6,
) -> list[ResultRow]:
    """Finite differences on randomly chosen network parameter coordinates.

    Coordinates whose perturbation flips a ReLU mask sit on a kink and are
    reported with value 0 (skipped), mirroring the audit contract.
    """
    rng = np.random.default_rng([seed, 2])
    net = QuantileValueNet.initialize(5, 2, 8, 8, rng)
    if zero_net:
        for arr in net.parameters().values():
            arr[:] = 0.0
    b, k = 6, 5
    states = rng.normal(size=(b, 5))
    taus = np.sort(rng.uniform(0.05, 0.95, size=(b, k)), axis=1)
    actions = rng.integers(0, 2, size=b)
    targets = rng.normal(size=(b, k))
    kappa = 1.0

    _, grads, _ = _net_loss(net, states, taus, actions, targets, kappa)
    params = net.parameters()
    names = sorted(params)
    rows = []
    for trial in range(n_params):
        t0 = time.perf_counter()
        name = names[int(rng.integers(len(names)))]
        arr = params[name]
        flat = int(rng.integers(arr.size))
        idx = np.unravel_index(flat, arr.shape)
        analytic = float(grads[name][idx])
        if sign_flip:
            analytic = -analytic
        orig = arr[idx]
        arr[idx] = orig + h
        lp, _, masks_p = _net_loss(net, states, taus, actions, targets, kappa)
        arr[idx] = orig - h
        lm, _, masks_m = _net_loss(net, states, taus, actions, targets, kappa)
        arr[idx] = orig
        if any(not np.array_equal(a, b_) for a, b_ in zip(masks_p, masks_m)):
            rows.append(ResultRow("gradcheck/backprop", seed, trial, "rel_err_skipped_kink", 0.0))
            continue
        fd = (lp - lm) / (2.0 * h)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-3)
        ms = (time.perf_counter() - t0) * 1000.0
        rows.append(ResultRow("gradcheck/backprop", seed, trial, "rel_err", rel, ms))
    return rows


def run_gradcheck(config: ExperimentConfig) -> tuple[list[ResultRow], float]:
    """Both audits plus a summary row; the caller turns `worst` into an exit code."""
    rows: list[ResultRow] = []
    worst = 0.0
    for seed in config.seeds:
        frac = fraction_gradient_audit(config.gradcheck_pairs, seed, sign_flip=config.sign_flip_bug)
        back = backprop_audit(
            config.gradcheck_params,
            seed,
            sign_flip=config.sign_flip_bug,
            zero_net=config.zero_net,
        )
        rows.extend(frac)
        rows.extend(back)
        seed_worst = max(
            (r.value for r in frac + back if r.metric != "rel_err_skipped_kink"), default=0.0
        )
        worst = max(worst, seed_worst)
        rows.append(ResultRow("gradcheck/summary", seed, 0, "worst_rel_err", seed_worst))
    return rows, worst


# ---------------------------------------------------------------------------
# optimize: descent traces and final fraction sets


def run_optimize(config: ExperimentConfig) -> list[ResultRow]:
    rows: list[ResultRow] = []
    for name in config.distributions:
        qf = named_distribution(name)
        for n in config.n_values:
            if n < 2:
                raise ValueError("optimize requires n_values >= 2")
            exp_id = f"optimize/{name}/N{n}"
            for seed in config.seeds:
                t0 = time.perf_counter()
                state = OptimizerState(**config.optimizer)
                fr, trace = optimize_fractions(
                    qf,
                    n,
                    steps=config.optimize_steps,
                    state=state,
                    entropy_coeff=config.entropy_coeff,
                    trace_every=max(1, config.optimize_steps // 50),
                )
                ms = (time.perf_counter() - t0) * 1000.0
                for step, w1 in trace:
                    rows.append(ResultRow(exp_id, seed, step, "w1", w1, ms))
                for i, tau in enumerate(fr.interior, start=1):
                    rows.append(
                        ResultRow(exp_id, seed, config.optimize_steps, f"tau_{i}", tau, ms)
                    )
    return rows


# ---------------------------------------------------------------------------
# train: learning curves, ground-truth W1 probes, and a checkpoint


def save_checkpoint(path: str, agent, meta: dict) -> str:
    arrays = dict(agent.net.parameters())
    arrays.update(agent.proposer_params())
    save_arrays(path, arrays, meta={**meta, "update_count": agent.update_count})
    return path


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    return load_arrays(path)


def _staircase_of(agent, features: np.ndarray, action: int) -> StaircaseApproximation:
    bounds, mids = agent.proposed_fractions(features, action)
    values = agent.quantile_curve(features, action, mids)
    return StaircaseApproximation(FractionSet(tuple(bounds[1:-1])), tuple(values))


def run_train(
    config: ExperimentConfig, seed: int, exp_id: str | None = None
) -> tuple[list[ResultRow], str | None]:
    """One training run; returns rows and the checkpoint path (None if diverged)."""
    mdp = resolve_environment(config.environment)
    agent_cfg = AgentConfig(**config.agent)
    if exp_id is None:
        exp_id = f"train/{config.environment}/{agent_cfg.kind}"
    rows: list[ResultRow] = []
    t0 = time.perf_counter()

    ground = None
    if mdp.n_actions == 1:
        # policy-free ground truth, computed once and reused at every probe
        ground = true_return_distribution(
            mdp, lambda s, r: 0, mdp.start_state, 0, config.probe_draws,
            np.random.default_rng([seed, 101]),
        )

    start_features = mdp.features[mdp.start_state]

    def probe(agent, diag):
        step = diag["update"]
        ms = (time.perf_counter() - t0) * 1000.0
        prng = np.random.default_rng([seed, 202, step])
        q = agent.action_values(start_features, prng)
        greedy = int(np.argmax(q))
        gt = ground
        if gt is None:
            gt = true_return_distribution(
                mdp, agent.policy(0.0, mdp), mdp.start_state, greedy,
                config.probe_draws, np.random.default_rng([seed, 101, step]),
            )
        w1 = w1_error(gt, _staircase_of(agent, start_features, greedy), tol=1e-4, max_depth=30)
        mean_ret, _ = evaluate_policy(
            mdp, agent.policy(agent_cfg.epsilon_eval, mdp), config.eval_episodes,
            np.random.default_rng([seed, 303, step]),
        )
        metrics = [
            ("loss", diag["loss"]),
            ("fraction_grad", diag["mean_abs_fraction_grad"]),
            ("monotonicity_violation_rate", diag["monotonicity_violation_rate"]),
            ("w1_start", w1),
            ("eval_return", mean_ret),
        ]
        metrics.extend((f"q_action_{a}", q[a]) for a in range(len(q)))
        rows.extend(ResultRow(exp_id, seed, step, m, v, ms) for m, v in metrics)

    try:
        agent, _ = train_agent(
            mdp, agent_cfg, seed, config.train_updates,
            diag_every=config.train_updates,
            probe_every=config.record_every, probe=probe,
        )
    except TrainingDivergedError as err:
        step = int(err.diagnostics.get("update", -1))
        ms = (time.perf_counter() - t0) * 1000.0
        rows.append(ResultRow(exp_id, seed, step, "diverged", float("nan"), ms))
        return rows, None

    ckpt = os.path.join(config.out_dir, f"checkpoint_{agent_cfg.kind}_seed{seed}.json")
    save_checkpoint(
        ckpt, agent,
        {"environment": config.environment, "kind": agent_cfg.kind, "seed": seed},
    )
    return rows, ckpt


# ---------------------------------------------------------------------------
# sweep: agent kinds x seeds fanned out over a process pool


def _sweep_cell(spec: dict, kind: str, seed: int) -> tuple[str, str]:
    """One (agent kind, seed) cell, writing its own result and timing files."""
    config = config_from_dict(spec)
    config.agent = {**config.agent, "kind": kind}
    config.seeds = (seed,)
    exp_id = f"train/{config.environment}/{kind}"
    rows, _ = run_train(config, seed, exp_id=exp_id)
    stem = os.path.join(config.out_dir, f"sweep_{kind}_seed{seed}")
    write_result_csv(stem + ".csv", rows)
    write_timing_csv(stem + "_timing.csv", rows)
    return stem + ".csv", stem + "_timing.csv"


def config_to_dict(config: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def run_sweep(config: ExperimentConfig) -> list[ResultRow]:
    """Each cell writes its own file; the merge re-reads them in cell order."""
    cells = [(kind, seed) for kind in config.agent_kinds for seed in config.seeds]
    spec = config_to_dict(config)
    spec["kind"] = "train"
    workers = min(worker_count(), len(cells))
    if workers <= 1 or len(cells) == 1:
        paths = [_sweep_cell(spec, kind, seed)[0] for kind, seed in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, spec, kind, seed) for kind, seed in cells]
            paths = [f.result()[0] for f in futures]
    merged: list[ResultRow] = []
    for path in paths:
        merged.extend(read_result_csv(path))
    return merged
