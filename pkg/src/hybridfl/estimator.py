"""Regional client selection without per-client reliability knowledge.

Each edge node sees only how many models it collected per round. From that
log it fits a regional slack factor theta by least squares on ``y = theta * x``
with ``x = C_r * q_r`` and ``y = |S_r| / n_r``, then inflates its selection
proportion to ``C / theta``.

Nothing in this module takes a client id, a drop-out flag or a survival
probability, with the single exception of :func:`expected_survivors_mc`,
which is a test oracle and never used by the protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

THETA_INIT = 0.5
THETA_FLOOR = 0.05


@dataclass
class RegionHistory:
    """Observable per-round log of one edge node."""

    n_r: int
    theta_init: float = THETA_INIT
    C_r: list = field(default_factory=list)
    q_r: list = field(default_factory=list)
    S_count: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_r < 1:
            raise ValueError("a region needs at least one client")
        if not 0 < self.theta_init <= 1:
            raise ValueError("theta_init must lie in (0, 1]")

    def __len__(self):
        return len(self.C_r)

    def append(self, C_r, q_r, S_count):
        if not 0 < C_r <= 1:
            raise ValueError(f"C_r must lie in (0, 1], got {C_r!r}")
        if q_r < 0:
            raise ValueError(f"q_r must be nonnegative, got {q_r!r}")
        if not 0 <= S_count <= self.n_r:
            raise ValueError(f"S_count must lie in [0, {self.n_r}], got {S_count!r}")
        self.C_r.append(float(C_r))
        self.q_r.append(float(q_r))
        self.S_count.append(int(S_count))

    def window(self, size):
        """Copy restricted to the most recent ``size`` rounds (``None`` keeps all)."""
        if size is None or size >= len(self):
            sl = slice(None)
        else:
            sl = slice(len(self) - size, None)
        return RegionHistory(self.n_r, self.theta_init,
                             self.C_r[sl], self.q_r[sl], self.S_count[sl])


@dataclass(frozen=True)
class SelectionDecision:
    C_r: float
    U_r_size: int
    clamped: bool


def compute_q(S_count, C, n_r):
    """Submissions relative to the region's share of the global quota."""
    denom = C * n_r
    if denom <= 0:
        raise ValueError(f"C * n_r must be positive, got {denom!r}")
    return S_count / denom


def lse_slope(x, y):
    """Least-squares coefficient of ``y ~ a * x`` (no intercept); ``None`` if undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    den = float(np.dot(x, x))
    if x.size == 0 or den == 0.0:
        return None
    return float(np.dot(x, y)) / den


def estimate_theta(history: RegionHistory, window=None):
    """Slack factor fitted on the edge log, clamped to ``[THETA_FLOOR, 1]``.

    Falls back to ``history.theta_init`` when the log is empty or carries no
    signal (every ``C_r * q_r`` is zero).
    """
    h = history.window(window)
    x = np.multiply(h.C_r, h.q_r)
    y = np.asarray(h.S_count, dtype=float) / h.n_r
    theta = lse_slope(x, y)
    if theta is None:
        return h.theta_init
    return min(1.0, max(THETA_FLOOR, theta))


def round_half_up(x):
    return int(math.floor(x + 0.5))


def selection_proportion(C, theta_hat, n_r):
    if not 0 < C <= 1:
        raise ValueError(f"C must lie in (0, 1], got {C!r}")
    if not theta_hat > 0:
        raise ValueError(f"theta_hat must be positive, got {theta_hat!r}")
    if n_r < 1:
        raise ValueError("n_r must be at least 1")
    raw = C / theta_hat
    C_r = min(1.0, raw)
    size = min(n_r, max(1, round_half_up(C_r * n_r)))
    return SelectionDecision(C_r=C_r, U_r_size=size, clamped=raw > 1.0)


def sample_survivor_counts(reliabilities, U_size, trials, seed):
    """Survivor count of each Monte-Carlo trial.

    Each trial draws ``U_size`` of the clients uniformly without replacement
    and lets each of them survive with its own probability.
    """
    p = np.asarray(reliabilities, dtype=float)
    n = p.size
    if not 0 <= U_size <= n:
        raise ValueError(f"U_size must lie in [0, {n}], got {U_size!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if U_size == 0:
        return np.zeros(trials, dtype=int)
    rng = np.random.default_rng(seed)
    # Uniform subsets via argsort of iid keys, one row per trial.
    chosen = np.argsort(rng.random((trials, n)), axis=1)[:, :U_size]
    alive = rng.random((trials, U_size)) < p[chosen]
    return alive.sum(axis=1)


def expected_survivors_mc(reliabilities, U_size, trials, seed):
    return float(sample_survivor_counts(reliabilities, U_size, trials, seed).mean())
