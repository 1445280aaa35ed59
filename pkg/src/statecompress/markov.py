"""Finite-state Markov chains: trajectories, empirical matrices, stationary
distributions, mixing times and simulation.

Conventions
-----------
States are 0-based.  A trajectory ``X_0, ..., X_n`` has ``n + 1`` entries and
``n`` transitions; every ``n`` in this module counts transitions.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from statecompress import _backend
from statecompress.errors import (
    DimensionError,
    InsufficientDataError,
    MixingCapError,
    NumericalError,
    ReversibilityError,
    StructuralError,
    ValidationError,
)

ROW_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-8
DIRECT_SOLVE_MAX_STATES = 512


@dataclass(frozen=True)
class Trajectory:
    """Observed state sequence ``X_0, ..., X_n`` on ``p`` states."""

    states: np.ndarray
    p: int

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.int64)
        if states.ndim != 1 or states.size < 1:
            raise InsufficientDataError("a trajectory needs at least one state")
        p = int(self.p)
        if p < 1:
            raise ValidationError(f"state-space size must be positive, got {p}")
        if states.min() < 0 or states.max() >= p:
            bad = int(np.flatnonzero((states < 0) | (states >= p))[0])
            raise ValidationError(
                f"state {int(states[bad])} at position {bad} is outside [0, {p})"
            )
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.states.size

    @property
    def n_transitions(self) -> int:
        return self.states.size - 1


TrajectoryLike = Union[Trajectory, Sequence[int], np.ndarray]


def as_trajectory(traj: TrajectoryLike, p: Optional[int] = None) -> Trajectory:
    """Coerce ``traj`` to a :class:`Trajectory`; ``p`` defaults to ``max + 1``."""
    if isinstance(traj, Trajectory):
        if p is not None and int(p) != traj.p:
            return Trajectory(traj.states, p)
        return traj
    states = np.asarray(traj, dtype=np.int64).ravel()
    if p is None:
        if states.size == 0:
            raise InsufficientDataError("empty trajectory")
        p = int(states.max()) + 1
    return Trajectory(states, p)


@dataclass(frozen=True)
class ValidationReport:
    is_stochastic: bool
    is_ergodic_class: bool
    failing_rows: tuple = ()
    max_row_error: float = 0.0

    def __bool__(self):
        return self.is_stochastic and self.is_ergodic_class

    def describe(self) -> str:
        if not self.is_stochastic:
            rows = ", ".join(str(i) for i in self.failing_rows[:10])
            return (
                f"not row-stochastic: rows [{rows}] fail "
                f"(max row-sum error {self.max_row_error:.3g})"
            )
        if not self.is_ergodic_class:
            return "stochastic but not irreducible: some proper state subset is closed"
        return "ok"


@dataclass(frozen=True)
class StationaryDistribution:
    probs: np.ndarray

    @property
    def pi_min(self) -> float:
        return float(self.probs.min())

    @property
    def pi_max(self) -> float:
        return float(self.probs.max())

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class ChainDiagnostics:
    pi_min: float
    pi_max: float
    kappa: float
    r_tilde: float
    sigma_r: float
    sigma_r_plus_1: float
    lambda2: Optional[float]
    tau_star: Optional[int]
    gap_degenerate: bool = False
    notes: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "pi_min": self.pi_min,
            "pi_max": self.pi_max,
            "kappa": self.kappa,
            "r_tilde": self.r_tilde,
            "sigma_r": self.sigma_r,
            "sigma_r_plus_1": self.sigma_r_plus_1,
            "lambda2": self.lambda2,
            "tau_star": self.tau_star,
            "gap_degenerate": self.gap_degenerate,
            "notes": list(self.notes),
        }


def _square(M, name="matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def is_irreducible(M) -> bool:
    """Strong connectivity of the digraph with an edge wherever ``M_ij > 0``."""
    M = _square(M)
    if M.shape[0] == 1:
        return True
    n_comp, _ = connected_components(csr_matrix(M > 0), directed=True, connection="strong")
    return n_comp == 1


def validate_transition(M, tol: float = ROW_SUM_TOL) -> ValidationReport:
    """Check that ``M`` is row-stochastic and irreducible.

    Irreducibility is tested through strong connectivity, which is equivalent to
    no proper nonempty subset ``I`` having ``M[I, I^c] == 0``.
    """
    M = _square(M)
    finite = np.isfinite(M).all(axis=1)
    in_range = ((M >= 0) & (M <= 1)).all(axis=1)
    row_err = np.abs(M.sum(axis=1) - 1.0)
    row_err = np.where(finite, row_err, np.inf)
    ok_rows = finite & in_range & (row_err <= tol)
    failing = tuple(int(i) for i in np.flatnonzero(~ok_rows))
    stochastic = not failing
    max_err = float(row_err.max()) if row_err.size else 0.0
    ergodic = stochastic and is_irreducible(M)
    return ValidationReport(stochastic, ergodic, failing, max_err)


def to_stochastic(M, tol: float = RENORMALIZE_TOL):
    """Return ``(P, renormalized)``.

    Rows whose sums are within ``tol`` of one are rescaled to sum to one (as
    happens with float-serialized matrices); ``renormalized`` flags that this
    happened.  Anything further off raises :class:`ValidationError`.
    """
    M = _square(M)
    report = validate_transition(M)
    if report.is_stochastic:
        return M.copy(), False
    sums = M.sum(axis=1)
    bad = np.flatnonzero(
        ~np.isfinite(M).all(axis=1) | (M < 0).any(axis=1) | (np.abs(sums - 1.0) > tol)
    )
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"row {i} is not a probability vector (sum={float(sums[i])!r}); "
            f"failing rows: {bad[:10].tolist()}"
        )
    warnings.warn("transition matrix rows renormalized (row sums off by <= 1e-8)")
    return M / sums[:, None], True


def _require_ergodic(P) -> np.ndarray:
    P = _square(P, "transition matrix")
    report = validate_transition(P)
    if not report.is_stochastic:
        raise ValidationError(report.describe())
    if not report.is_ergodic_class:
        raise StructuralError(report.describe())
    return P


def empirical_counts(traj: TrajectoryLike, p: Optional[int] = None) -> np.ndarray:
    """Transition count table ``N_ij = #{k : X_{k-1} = i, X_k = j}``."""
    traj = as_trajectory(traj, p)
    if traj.n_transitions < 1:
        raise InsufficientDataError("need at least two states (one transition)")
    return _backend.count_pairs(traj.states, traj.p)


def empirical_frequency(traj: TrajectoryLike, p: Optional[int] = None) -> np.ndarray:
    """Empirical frequency matrix: pair counts divided by the number of transitions."""
    traj = as_trajectory(traj, p)
    counts = empirical_counts(traj)
    return counts / traj.n_transitions


def transition_from_counts(counts) -> np.ndarray:
    """Row-normalize a count (or frequency) table; empty rows become uniform."""
    counts = np.asarray(counts, dtype=np.float64)
    q = counts.shape[1]
    sums = counts.sum(axis=1)
    P = np.full(counts.shape, 1.0 / q)
    seen = sums > 0
    P[seen] = counts[seen] / sums[seen, None]
    return P


def empirical_transition(traj: TrajectoryLike, p: Optional[int] = None) -> np.ndarray:
    """Empirical transition matrix with a uniform row for never-left states."""
    return transition_from_counts(empirical_counts(traj, p))


def empirical_distribution(traj: TrajectoryLike, p: Optional[int] = None) -> np.ndarray:
    """Visit frequencies over positions ``1..n`` (the first state is skipped)."""
    traj = as_trajectory(traj, p)
    if traj.n_transitions < 1:
        raise InsufficientDataError("need at least two states (one transition)")
    visits = np.bincount(traj.states[1:], minlength=traj.p)
    return visits / traj.n_transitions


def _power_iteration(P, tol=1e-12, max_iter=10**6):
    # the lazy chain (I + P)/2 shares pi with P and is aperiodic
    p = P.shape[0]
    lazy = 0.5 * (P + np.eye(p))
    pi = np.full(p, 1.0 / p)
    delta = np.inf
    for _ in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        delta = np.abs(nxt - pi).sum()
        pi = nxt
        if delta < tol:
            return pi
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations", residual=delta
    )


def stationary_distribution(P, method: str = "auto") -> StationaryDistribution:
    """Invariant distribution of an irreducible transition matrix.

    ``method`` is ``"solve"`` (linear system with a simplex constraint),
    ``"power"``, or ``"auto"``, which solves directly up to 512 states.
    """
    P = _require_ergodic(P)
    p = P.shape[0]
    if method == "auto":
        method = "solve" if p <= DIRECT_SOLVE_MAX_STATES else "power"
    if method == "solve":
        A = P.T - np.eye(p)
        A[-1, :] = 1.0
        b = np.zeros(p)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
    elif method == "power":
        pi = _power_iteration(P)
    else:
        raise ValidationError(f"unknown method {method!r}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(pi @ P - pi).sum())
    if residual >= 1e-10:
        if method == "solve":
            pi = _power_iteration(P)
            residual = float(np.abs(pi @ P - pi).sum())
        if residual >= 1e-10:
            raise NumericalError(
                f"stationary distribution residual {residual:.3g} too large", residual
            )
    return StationaryDistribution(pi)


def frequency_from_transition(P, pi) -> np.ndarray:
    """``F = diag(pi) P``."""
    P = _square(P, "transition matrix")
    pi = np.asarray(pi, dtype=np.float64).ravel()
    if pi.size != P.shape[0]:
        raise DimensionError(f"pi has length {pi.size} but P is {P.shape}")
    return pi[:, None] * P


def is_reversible(P, pi=None, tol: float = 1e-10) -> bool:
    P = _square(P)
    if pi is None:
        pi = stationary_distribution(P).probs
    F = frequency_from_transition(P, pi)
    return bool(np.abs(F - F.T).max() <= tol)


def mixing_distance(P, pi, k: int) -> float:
    """``max_i (1/2) || P^k[i, :] - pi ||_1``."""
    Pk = np.linalg.matrix_power(_square(P), k)
    return float(0.5 * np.abs(Pk - np.asarray(pi)[None, :]).sum(axis=1).max())


def mixing_time(P, epsilon: float = 0.25, max_states: int = 2000, max_steps: int = 10**6) -> int:
    """Smallest ``k >= 1`` with every row of ``P^k`` within ``epsilon`` TV of pi."""
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    P = _require_ergodic(P)
    p = P.shape[0]
    if p > max_states:
        raise ValidationError(f"{p} states exceeds the dense-power cap of {max_states}")
    pi = stationary_distribution(P).probs
    Pk = P.copy()
    dist = np.inf
    for k in range(1, max_steps + 1):
        if k > 1:
            Pk = Pk @ P
        dist = 0.5 * np.abs(Pk - pi[None, :]).sum(axis=1).max()
        if dist <= epsilon:
            return k
    raise MixingCapError(
        f"not within {epsilon} of stationarity after {max_steps} steps "
        f"(last distance {dist:.4g})",
        last_distance=float(dist),
    )


def second_eigenvalue(P, pi=None) -> float:
    """Second-largest eigenvalue of a reversible transition matrix.

    Uses the symmetrization ``D^{1/2} P D^{-1/2}`` so the spectrum is real.
    """
    P = _square(P)
    if pi is None:
        pi = stationary_distribution(P).probs
    s = np.sqrt(pi)
    S = s[:, None] * P / s[None, :]
    S = 0.5 * (S + S.T)
    eig = np.linalg.eigvalsh(S)
    return float(eig[-2]) if eig.size > 1 else 0.0


def eigengap_mixing_bound(P, epsilon: float = 0.25, tol: float = 1e-10) -> float:
    """Upper bound ``log(1 / (epsilon * pi_min)) / (1 - lambda_2)`` on the mixing time.

    Requires detailed balance.  The bound controls ``tau(epsilon)`` when the
    nontrivial spectrum is nonnegative (e.g. lazy chains); a large negative
    eigenvalue can slow mixing beyond what ``lambda_2`` alone captures.
    """
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    P = _require_ergodic(P)
    pi = stationary_distribution(P).probs
    F = frequency_from_transition(P, pi)
    violation = float(np.abs(F - F.T).max())
    if violation > tol:
        raise ReversibilityError(
            f"detailed balance violated by up to {violation:.3g}", violation
        )
    lam2 = second_eigenvalue(P, pi)
    if lam2 >= 1.0:
        raise StructuralError(f"second eigenvalue {lam2} is not below 1")
    return math.log(1.0 / (epsilon * pi.min())) / (1.0 - lam2)


def chain_diagnostics(P, r: int, epsilon: float = 0.25, max_steps: int = 10**6) -> ChainDiagnostics:
    """Constants that enter the error bounds for a known chain."""
    P = _require_ergodic(P)
    p = P.shape[0]
    if not 1 <= r <= p:
        raise ValidationError(f"rank {r} outside [1, {p}]")
    pi = stationary_distribution(P).probs
    F = frequency_from_transition(P, pi)
    sv = np.linalg.svd(F, compute_uv=False)
    sigma_r = float(sv[r - 1])
    sigma_next = float(sv[r]) if r < p else 0.0
    notes = []
    lam2 = None
    if np.abs(F - F.T).max() <= 1e-10:
        lam2 = second_eigenvalue(P, pi)
    tau = None
    try:
        tau = mixing_time(P, epsilon, max_steps=max_steps)
    except MixingCapError as exc:
        notes.append(f"tau_star unavailable: {exc}")
    gap_degenerate = r < p and abs(sigma_r - sigma_next) <= 1e-12 * max(1.0, sv[0])
    if gap_degenerate:
        notes.append("sigma_r and sigma_{r+1} coincide; leading subspace is ill-posed")
    return ChainDiagnostics(
        pi_min=float(pi.min()),
        pi_max=float(pi.max()),
        kappa=float(p * p * F.max()),
        r_tilde=float((F ** 2).sum() / sigma_r ** 2) if sigma_r > 0 else math.inf,
        sigma_r=sigma_r,
        sigma_r_plus_1=sigma_next,
        lambda2=lam2,
        tau_star=tau,
        gap_degenerate=bool(gap_degenerate),
        notes=tuple(notes),
    )


def _cdf_table(P) -> np.ndarray:
    cdf = np.cumsum(P, axis=1)
    # dividing by the last column makes it exactly 1, so every u in [0, 1) lands
    cdf /= cdf[:, -1:]
    return np.ascontiguousarray(cdf)


def simulate_trajectory(P, initial, n: int, seed=None) -> Trajectory:
    """Sample ``X_0, ..., X_n`` from ``P``.

    ``initial`` is either a state index or a probability vector from which
    ``X_0`` is drawn (pass the stationary distribution for a stationary start).
    Output is a deterministic function of ``seed``.
    """
    P = _square(P, "transition matrix")
    report = validate_transition(P, tol=RENORMALIZE_TOL)
    if not report.is_stochastic:
        raise ValidationError(report.describe())
    p = P.shape[0]
    n = int(n)
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    if np.ndim(initial) == 0:
        start = int(initial)
        if not 0 <= start < p:
            raise ValidationError(f"initial state {start} outside [0, {p})")
    else:
        init = np.asarray(initial, dtype=np.float64)
        if init.shape != (p,) or (init < 0).any() or abs(init.sum() - 1.0) > RENORMALIZE_TOL:
            raise ValidationError("initial distribution must be a length-p probability vector")
        c0 = np.cumsum(init)
        c0 /= c0[-1]
        start = int(np.searchsorted(c0, rng.random(), side="right"))
    uniforms = rng.random(n)
    path = _backend.sample_path(_cdf_table(P), start, uniforms)
    return Trajectory(path, p)
