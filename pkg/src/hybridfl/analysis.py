"""Convergence-bound evaluation and an empirical check on convex problems.

The global objective of a round is the gamma-weighted sum of client losses.
``h_bar`` bounds how far the aggregated model drifts from a model trained
by plain gradient descent on that objective, and :func:`divergence_bound`
turns the drift into a loss gap. :func:`verify_theorem1_empirically` runs
both recursions on least-squares clients, where every constant has a closed
form, and compares the measured gap against the bound epoch by epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .trainer import Arch, Dataset, LossKind, ModelParams, evaluate, loss_and_grad


@dataclass(frozen=True)
class BoundParameters:
    rho: float
    beta: float
    delta_bar: float
    eta: float
    tau: int
    omega: Optional[float] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        for name in ("rho", "beta", "eta", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.delta_bar < 0:
            raise ValueError("delta_bar must be nonnegative")
        for name in ("omega", "epsilon"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when given, got {v!r}")


@dataclass(frozen=True)
class ObjectiveSnapshot:
    """Client partitions and their weights for one round's objective."""

    gamma: np.ndarray
    partitions: tuple  # one Dataset per client
    arch: Arch
    loss: LossKind = LossKind.MSE
    w_star: Optional[ModelParams] = field(default=None, repr=False)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if g.shape != (len(self.partitions),):
            raise ValueError("need one gamma weight per partition")
        if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-9:
            raise ValueError(f"gamma must be nonnegative and sum to 1, sums to {g.sum()!r}")


def global_objective(w: ModelParams, snapshot: ObjectiveSnapshot) -> float:
    return float(sum(g * evaluate(w, d, snapshot.loss).loss
                     for g, d in zip(snapshot.gamma, snapshot.partitions)))


def _grads(w, snapshot):
    return [loss_and_grad(w, d, snapshot.loss)[1] for d in snapshot.partitions]


def global_gradient(w: ModelParams, snapshot: ObjectiveSnapshot):
    return sum(g * gk for g, gk in zip(snapshot.gamma, _grads(w, snapshot)))


def estimate_divergence(snapshot: ObjectiveSnapshot, probes) -> float:
    """Largest ``|grad F_k(w) - grad F(w)|`` seen over clients and probe points."""
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one probe point")
    best = 0.0
    for w in probes:
        grads = _grads(w, snapshot)
        full = sum(g * gk for g, gk in zip(snapshot.gamma, grads))
        best = max(best, max(float(np.linalg.norm(gk - full)) for gk in grads))
    return best


def h_bar(x, eta, beta, delta_bar):
    """``delta/beta * ((eta*beta + 1)^x - 1) - eta*delta*x``."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    a = eta * beta
    if float(x).is_integer():
        # (1+a)^x - 1 - a x = sum_{j>=2} C(x, j) a^j, free of cancellation
        x = int(x)
        total, term = 0.0, a * x  # j = 1 term, excluded from the sum
        for j in range(1, x):
            term *= a * (x - j) / (j + 1)
            total += term
            if term <= total * 1e-17:
                break
        return float(delta_bar / beta * total)
    return float(delta_bar / beta * np.expm1(x * np.log1p(a)) - eta * delta_bar * x)


def divergence_bound(z, t, tau, params: BoundParameters) -> float:
    """Bound on ``F(w[z]) - F(v_t[z])`` at epoch ``z`` of round ``t``."""
    if not (t - 1) * tau < z <= t * tau:
        raise ValueError(f"epoch {z} is not inside round {t} (tau={tau})")
    return params.rho * h_bar(z - (t - 1) * tau, params.eta, params.beta, params.delta_bar)


class ConvergenceBound(NamedTuple):
    bound: Optional[float]
    step_size_ok: bool  # eta <= 1/beta
    denominator_positive: bool
    v_gap_ok: Optional[bool]  # None = assumed, not checked
    w_gap_ok: Optional[bool]


def convergence_bound(t, params: BoundParameters, *, v_gap_min=None, w_gap=None):
    """Upper bound on ``F(w(t)) - F(w*)`` after ``t`` rounds.

    ``omega`` and ``epsilon`` must be set on ``params``. The last two
    conditions involve ``F(w*)`` and are only checked when the caller passes
    the measured gaps (smallest ``F(v_t[z]) - F(w*)`` over the round, and
    ``F(w(t)) - F(w*)``).
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    if params.omega is None or params.epsilon is None:
        raise ValueError("omega and epsilon are required")
    p = params
    d = (p.omega * p.eta * (1 - p.beta * p.eta / 2)
         - p.rho * h_bar(p.tau, p.eta, p.beta, p.delta_bar) / (p.tau * p.epsilon ** 2))
    positive = d > 0
    v_ok = None if v_gap_min is None else bool(v_gap_min >= p.epsilon)
    w_ok = None if w_gap is None else bool(w_gap >= p.epsilon)
    bound = 1.0 / (t * p.tau * d) if positive else None
    return ConvergenceBound(bound, bool(p.eta <= 1.0 / p.beta), bool(positive), v_ok, w_ok)


# -- empirical harness on least-squares clients --------------------------------------

def quadratic_client(X, y) -> Dataset:
    """Client whose loss ``mean((X w - y)^2)`` is a convex quadratic in ``w``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return Dataset(X, np.asarray(y, dtype=float).ravel(), "regression")


def linear_arch(d) -> Arch:
    return Arch((d, 1), activation="identity", bias=False)


def _hessian_and_linear(data: Dataset):
    # F_k(w) = mean((Xw - y)^2)  =>  grad = H w - g
    n = len(data)
    X, y = data.features, data.targets
    return 2.0 * X.T @ X / n, 2.0 * X.T @ y / n


@dataclass(frozen=True)
class QuadraticConstants:
    rho: float
    beta: float
    delta_bar: float
    radius: float
    w_star: np.ndarray


def quadratic_constants(snapshot: ObjectiveSnapshot, radius=None, w0=None) -> QuadraticConstants:
    """Closed-form constants over the ball of ``radius`` around the optimum.

    ``beta`` is the largest client curvature, ``rho`` bounds ``|grad F|`` on
    the ball and ``delta_bar`` bounds every ``|grad F_k - grad F|`` on it (the
    norm of an affine map plus its operator norm times the radius).
    """
    parts = [_hessian_and_linear(d) for d in snapshot.partitions]
    H = sum(g * h for g, (h, _) in zip(snapshot.gamma, parts))
    b = sum(g * v for g, (_, v) in zip(snapshot.gamma, parts))
    w_star = np.linalg.lstsq(H, b, rcond=None)[0]
    if radius is None:
        if w0 is None:
            raise ValueError("need radius or w0")
        radius = 2.0 * float(np.linalg.norm(np.asarray(w0) - w_star))
    beta = max(float(np.linalg.eigvalsh(h).max()) for h, _ in parts)
    rho = float(np.linalg.norm(H @ w_star - b)) + float(np.linalg.eigvalsh(H).max()) * radius
    delta = 0.0
    for h, v in parts:
        M, c = h - H, v - b
        delta = max(delta, float(np.linalg.norm(M @ w_star - c)) + float(np.linalg.norm(M, 2)) * radius)
    return QuadraticConstants(rho, beta, delta, float(radius), w_star)


class EpochRecord(NamedTuple):
    epoch: int
    round: int
    gap: float
    bound: float


@dataclass
class Theorem1Report:
    records: list
    constants: QuadraticConstants
    tol: float = 1e-12

    @property
    def passed(self):
        return all(r.gap <= r.bound + self.tol for r in self.records)

    @property
    def max_gap(self):
        return max((r.gap for r in self.records), default=0.0)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["epoch", "gap", "bound"])
            for r in self.records:
                out.writerow([r.epoch, repr(r.gap), repr(r.bound)])


def _run_recursions(snapshot, w0, tau, eta, rounds):
    """Per epoch: index, round, aggregate w[z], centralized v_t[z], local models."""
    parts = [_hessian_and_linear(d) for d in snapshot.partitions]
    H = sum(g * h for g, (h, _) in zip(snapshot.gamma, parts))
    b = sum(g * v for g, (_, v) in zip(snapshot.gamma, parts))
    w = np.asarray(w0, dtype=float).copy()
    out = []
    for t in range(1, rounds + 1):
        local = [w.copy() for _ in parts]
        v = w.copy()
        for i in range(1, tau + 1):
            local = [wk - eta * (h @ wk - g) for wk, (h, g) in zip(local, parts)]
            v = v - eta * (H @ v - b)
            agg = sum(g * wk for g, wk in zip(snapshot.gamma, local))
            out.append(((t - 1) * tau + i, t, agg, v, local))
        w = agg
    return out


def verify_theorem1_empirically(snapshot: ObjectiveSnapshot, w0, tau, eta, rounds,
                                radius=None, tol=1e-12) -> Theorem1Report:
    """Compare the measured loss gap with ``rho * h_bar`` at every epoch.

    The constants are computed on a ball around the optimum large enough to
    hold every iterate of both recursions (at least twice the initial
    distance), so they are valid along the whole run.
    """
    if tau < 1 or rounds < 1:
        raise ValueError("tau and rounds must be at least 1")
    w0 = np.asarray(w0, dtype=float).ravel()
    trace = _run_recursions(snapshot, w0, tau, eta, rounds)
    base = quadratic_constants(snapshot, w0=w0)
    # local iterates must stay inside the ball too
    reach = max(np.linalg.norm(p - base.w_star)
                for _, _, a, v, local in trace for p in (a, v, *local))
    R = max(base.radius, float(reach)) if radius is None else float(radius)
    consts = quadratic_constants(snapshot, radius=R)
    if eta > 1.0 / consts.beta:
        raise ValueError(f"eta={eta} exceeds 1/beta={1.0 / consts.beta:.6g}")
    params = BoundParameters(consts.rho, consts.beta, consts.delta_bar, eta, tau)
    records = []
    for z, t, agg, v, _ in trace:
        gap = (global_objective(ModelParams(snapshot.arch, agg), snapshot)
               - global_objective(ModelParams(snapshot.arch, v), snapshot))
        records.append(EpochRecord(z, t, gap, divergence_bound(z, t, tau, params)))
    return Theorem1Report(records, consts, tol)


def random_quadratic_instance(rng, n_clients=3, d=1, samples=4, spread=1.0):
    """Least-squares clients with different feature scales and targets."""
    parts = []
    for _ in range(n_clients):
        scale = rng.uniform(0.3, 1.5)
        X = scale * rng.standard_normal((samples, d))
        y = X @ rng.normal(0, spread, d) + rng.normal(0, spread, samples)
        parts.append(quadratic_client(X, y))
    gamma = rng.dirichlet(np.ones(n_clients))
    return ObjectiveSnapshot(gamma, parts, linear_arch(d))
