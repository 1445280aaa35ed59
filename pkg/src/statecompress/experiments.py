"""Seeded Monte-Carlo sweeps over generators, dimensions and sample sizes.

A sweep cell is ``(p, k)`` for a fixed generator and rank ``r``; the trajectory
length is ``n = round(k p r log^2(p))`` (``n_rule="log_p"``) or the solution of
``n = k p r log^2(n)`` (``n_rule="log_n"``).  Each trial draws a fresh truth
chain, simulates one trajectory and scores the empirical and spectral
estimators against the truth.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from statecompress import synth
from statecompress.errors import ConfigError, InsufficientDataError, StateCompressError
from statecompress.kmeans import KMeansConfig
from statecompress.markov import empirical_counts, simulate_trajectory, transition_from_counts
from statecompress.metrics import LossReport, matrix_losses, misclassification_rate, sin_theta
from statecompress.spectral import (
    estimate_low_rank_matrix,
    leading_subspaces_matrix,
    spectral_lumpable_partition_matrix,
    spectral_state_aggregation_matrix,
)

GENERATORS = ("low_rank", "imbalanced", "aggregatable", "lumpable")
_GENERATOR_CODE = {name: i for i, name in enumerate(GENERATORS)}
N_RULES = ("log_p", "log_n")
INITIAL_MODES = ("stationary", "fixed")
# a cell whose failure fraction exceeds this marks the run degraded
DEGRADED_FRACTION = 0.10
SUBSPACES = ("U_F", "V_F", "U_P", "V_P")


def sample_size(k: float, p: int, r: int, rule: str = "log_p") -> int:
    """Trajectory length for tuning constant ``k``."""
    if rule == "log_p":
        return int(round(k * p * r * math.log(p) ** 2))
    if rule == "log_n":
        # n = c log^2 n; the map has slope 2c log(n)/n < 1 near the large root
        c = k * p * r
        n = c * math.log(p) ** 2
        for _ in range(200):
            nxt = c * math.log(n) ** 2
            if abs(nxt - n) <= 1e-9 * n:
                n = nxt
                break
            n = nxt
        return int(round(n))
    raise ConfigError(f"unknown n_rule {rule!r}; expected one of {N_RULES}")


@dataclass(frozen=True)
class SweepConfig:
    generator: str = "low_rank"
    p_values: Tuple[int, ...] = (200,)
    r: int = 3
    k_values: Tuple[float, ...] = (2, 4, 6, 8, 10, 12)
    trials: int = 20
    base_seed: int = 0
    initial_mode: str = "stationary"
    initial_state: int = 0
    n_rule: str = "log_p"
    generator_params: Dict[str, float] = field(default_factory=dict)
    kmeans_restarts: int = 20
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(int(p) for p in self.p_values))
        object.__setattr__(self, "k_values", tuple(self.k_values))
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.k_values or any(k <= 0 for k in self.k_values):
            raise ConfigError("k_values must be positive")
        if not self.p_values or any(p < 2 for p in self.p_values):
            raise ConfigError("p_values must be at least 2")
        if self.initial_mode not in INITIAL_MODES:
            raise ConfigError(f"initial_mode must be one of {INITIAL_MODES}")
        if self.n_rule not in N_RULES:
            raise ConfigError(f"n_rule must be one of {N_RULES}")
        if self.kmeans_restarts < 1 or self.workers < 1:
            raise ConfigError("kmeans_restarts and workers must be at least 1")
        if self.generator == "imbalanced" and "delta" not in self.generator_params:
            raise ConfigError("the imbalanced generator needs generator_params.delta")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["p_values"] = list(self.p_values)
        d["k_values"] = list(self.k_values)
        return d


@dataclass(frozen=True)
class TrialRecord:
    generator: str
    p: int
    r: int
    k: float
    n: int
    trial: int
    seed: int
    estimator: str
    losses: LossReport
    wall_time: float = 0.0


@dataclass(frozen=True)
class TrialFailure:
    p: int
    k: float
    trial: int
    error: str


@dataclass
class SweepResult:
    config: SweepConfig
    records: List[TrialRecord]
    failures: List[TrialFailure]

    @property
    def degraded_cells(self) -> List[Tuple[int, float]]:
        counts: Dict[Tuple[int, float], int] = {}
        for f in self.failures:
            counts[(f.p, f.k)] = counts.get((f.p, f.k), 0) + 1
        return sorted(c for c, m in counts.items() if m / self.config.trials > DEGRADED_FRACTION)

    @property
    def degraded(self) -> bool:
        return bool(self.degraded_cells)

    def values(self, loss: str, estimator: str = "spectral", p: Optional[int] = None, k=None) -> np.ndarray:
        out = [
            rec.losses.as_dict()[loss]
            for rec in self.records
            if rec.estimator == estimator
            and (p is None or rec.p == p)
            and (k is None or rec.k == k)
            and loss in rec.losses.as_dict()
        ]
        return np.asarray(out, dtype=np.float64)

    def cell_means(self, loss: str, estimator: str = "spectral", p: Optional[int] = None):
        """``[(p, k, n, mean, stderr, count)]`` sorted by ``(p, k)``."""
        groups: Dict[Tuple[int, float, int], List[float]] = {}
        for rec in self.records:
            d = rec.losses.as_dict()
            if rec.estimator != estimator or loss not in d or (p is not None and rec.p != p):
                continue
            groups.setdefault((rec.p, rec.k, rec.n), []).append(d[loss])
        out = []
        for (pp, kk, nn), vals in sorted(groups.items()):
            v = np.asarray(vals)
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            out.append((pp, kk, nn, float(v.mean()), se, int(v.size)))
        return out

    def to_csv(self) -> str:
        """Long format, one loss per row.  Wall time is left out so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generator", "p", "r", "k", "n", "trial", "seed", "estimator", "loss", "value"])
        for rec in self.records:
            for name, value in rec.losses.as_dict().items():
                w.writerow([rec.generator, rec.p, rec.r, rec.k, rec.n, rec.trial, rec.seed, rec.estimator, name, repr(float(value))])
        return buf.getvalue()

    def summary(self) -> Dict[str, Any]:
        return build_summary(self)


def trial_seeds(config: SweepConfig, p: int, k, trial: int) -> Tuple[int, int]:
    """``(chain_seed, path_seed)`` for one trial.

    The chain seed does not depend on ``k``, so every ``k`` of a trial index
    sees the same truth chain and only the trajectory changes.
    """
    code = _GENERATOR_CODE[config.generator]
    chain = np.random.SeedSequence([config.base_seed, code, p, config.r, trial]).generate_state(1, np.uint32)[0]
    k_key = int(round(float(k) * 1000))
    path = np.random.SeedSequence([config.base_seed, code, p, config.r, k_key, trial, 1]).generate_state(1, np.uint32)[0]
    return int(chain), int(path)


def _make_chain(config: SweepConfig, p: int, seed: int) -> synth.GroundTruthChain:
    g = config.generator
    if g == "low_rank":
        return synth.gen_low_rank_chain(p, config.r, seed)
    if g == "imbalanced":
        return synth.gen_imbalanced_chain(p, config.r, float(config.generator_params["delta"]), seed)
    if g == "aggregatable":
        return synth.gen_aggregatable_chain(p, config.r, seed)
    return synth.gen_lumpable_chain(p, config.r, seed)


def run_trial(config: SweepConfig, p: int, k, trial: int):
    """Run one trial; returns ``(records, failure)`` with exactly one of them empty/None."""
    start = time.perf_counter()
    chain_seed, path_seed = trial_seeds(config, p, k, trial)
    n = sample_size(k, p, config.r, config.n_rule)
    try:
        chain = _make_chain(config, p, chain_seed)
        initial = chain.pi.probs if config.initial_mode == "stationary" else config.initial_state
        traj = simulate_trajectory(chain.P, initial, n, path_seed)
        counts = empirical_counts(traj)
        F_tilde = counts / traj.n_transitions
        P_tilde = transition_from_counts(counts)
        est = estimate_low_rank_matrix(F_tilde, config.r)
        empirical = matrix_losses(F_tilde, chain.F, P_tilde, chain.P)
        spectral = matrix_losses(est.F_hat, chain.F, est.P_hat, chain.P)

        truth = leading_subspaces_matrix(chain.F, chain.P, config.r)
        found = leading_subspaces_matrix(F_tilde, P_tilde, config.r)
        for name in SUBSPACES:
            a, b = getattr(found, name).basis, getattr(truth, name).basis
            spectral.extras[f"sin_theta_{name}"] = sin_theta(a, b, "spectral")
            spectral.extras[f"sin_theta_fro_{name}"] = sin_theta(a, b, "frobenius")
        spectral.sin_theta_spectral = max(spectral.extras["sin_theta_U_F"], spectral.extras["sin_theta_V_F"])
        spectral.sin_theta_frobenius = max(spectral.extras["sin_theta_fro_U_F"], spectral.extras["sin_theta_fro_V_F"])

        km = KMeansConfig(restarts=config.kmeans_restarts, seed=path_seed)
        if config.generator == "aggregatable":
            labels = spectral_state_aggregation_matrix(P_tilde, config.r, km)
            spectral.extras["misclassification"] = misclassification_rate(chain.partition, labels)
        elif config.generator == "lumpable":
            labels = spectral_lumpable_partition_matrix(F_tilde, config.r, km)
            spectral.extras["misclassification"] = misclassification_rate(chain.partition, labels)
    except (StateCompressError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return [], TrialFailure(p, k, trial, f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - start
    common = dict(generator=config.generator, p=p, r=config.r, k=k, n=n, trial=trial, seed=path_seed, wall_time=elapsed)
    return [TrialRecord(estimator="empirical", losses=empirical, **common),
            TrialRecord(estimator="spectral", losses=spectral, **common)], None


def _run_task(args):
    return args[1:], run_trial(*args)


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run every ``(p, k, trial)`` task and merge results by key.

    With ``config.workers > 1`` tasks run in a process pool; the output does
    not depend on the scheduler.
    """
    tasks = [(config, p, k, t) for p in config.p_values for k in config.k_values for t in range(config.trials)]
    if config.workers == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))
    results.sort(key=lambda item: item[0])
    records: List[TrialRecord] = []
    failures: List[TrialFailure] = []
    for _, (recs, failure) in results:
        records.extend(recs)
        if failure is not None:
            failures.append(failure)
    return SweepResult(config, records, failures)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    points: int


def fit_loglog(n_values: Sequence[float], losses: Sequence[float]) -> RateFit:
    """Least-squares fit of ``log(loss) = a + slope * log(n)``."""
    n = np.asarray(n_values, dtype=np.float64)
    y = np.asarray(losses, dtype=np.float64)
    if n.shape != y.shape or np.unique(n).size < 4:
        raise InsufficientDataError("a rate fit needs at least 4 distinct n values")
    if (n <= 0).any() or (y <= 0).any():
        raise InsufficientDataError("a log-log fit needs positive n and losses")
    X = np.column_stack([np.ones_like(n), np.log(n)])
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - np.log(y)) ** 2)))
    return RateFit(slope=float(coef[1]), intercept=float(coef[0]), residual=resid, points=int(n.size))


def fit_rate(result: SweepResult, loss_field: str = "l1_total", estimator: str = "spectral", p: Optional[int] = None) -> RateFit:
    """Slope of log mean loss against log n for one dimension ``p``."""
    if p is None:
        if len(result.config.p_values) != 1:
            raise InsufficientDataError("pass p when the sweep covers several dimensions")
        p = result.config.p_values[0]
    cells = result.cell_means(loss_field, estimator, p)
    return fit_loglog([c[2] for c in cells], [c[3] for c in cells])


def _series(result, loss, estimators=("empirical", "spectral")):
    out = {}
    for est in estimators:
        out[est] = [
            {"p": p, "k": k, "n": n, "mean": m, "stderr": se, "count": c}
            for p, k, n, m, se, c in result.cell_means(loss, est)
        ]
    return out


def build_summary(result: SweepResult) -> Dict[str, Any]:
    """JSON summary of loss series; series that do not apply to the generator are ``null``."""
    cfg = result.config
    g = cfg.generator
    series: Dict[str, Any] = {"frequency_l1": None, "transition_avg_row_tv": None, "dimension_scaling": None, "imbalanced": None, "lumpable_misclassification": None}
    if g == "low_rank":
        series["frequency_l1"] = _series(result, "l1_total")
        series["transition_avg_row_tv"] = _series(result, "avg_row_tv")
        if len(cfg.p_values) > 1:
            series["dimension_scaling"] = {"l1_total": _series(result, "l1_total"), "max_row_tv": _series(result, "max_row_tv")}
    elif g == "imbalanced":
        series["imbalanced"] = {"l1_total": _series(result, "l1_total"), "avg_row_tv": _series(result, "avg_row_tv")}
    elif g == "lumpable":
        series["lumpable_misclassification"] = _series(result, "misclassification", ("spectral",))["spectral"]
    subspaces = {name: _series(result, f"sin_theta_{name}", ("spectral",))["spectral"] for name in SUBSPACES}
    if g == "aggregatable":
        subspaces["misclassification"] = _series(result, "misclassification", ("spectral",))["spectral"]

    rates = {}
    for p in cfg.p_values:
        try:
            fit = fit_rate(result, "l1_total", "spectral", p)
            rates[str(p)] = {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual, "points": fit.points}
        except InsufficientDataError:
            rates[str(p)] = None

    if cfg.n_rule == "log_p":
        n_note = "n = round(k*p*r*log(p)^2)"
    else:
        n_note = "n = round(x) where x solves x = k*p*r*log(x)^2 (fixed-point iteration)"
    return {
        "metadata": {
            "config": cfg.to_dict(),
            "n_formula": n_note,
            "initial_state": "X0 drawn from the stationary distribution"
            if cfg.initial_mode == "stationary"
            else f"X0 fixed at state {cfg.initial_state}",
            "records": len(result.records),
            "failures": [asdict(f) for f in result.failures],
            "degraded": result.degraded,
            "degraded_cells": [list(c) for c in result.degraded_cells],
        },
        "series": series,
        "subspaces": subspaces,
        "rate_l1_total_spectral": rates,
    }


def summary_json(result: SweepResult) -> str:
    return json.dumps(build_summary(result), indent=2, sort_keys=True) + "\n"
