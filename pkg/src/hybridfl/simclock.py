"""Closed-form timing and energy models for clients, edges and the cloud.

Units: model sizes in bits, client speed in GHz, client bandwidth in MHz
(converted to Hz internally), cloud-edge bit rate in bits/s, times in
seconds, energy in joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

P_TRANS_W = 0.5
P_COMP_BASE_W = 0.7

BITS_PER_MB = 8e6


@dataclass(frozen=True)
class TimingParams:
    msize: float  # bits
    BR: float  # bits/s
    SNR: float
    BPS: float  # bits/sample
    CPB: float  # cycles/bit
    tau: int
    T_lim: float = math.inf
    P_trans: float = P_TRANS_W
    P_comp_base: float = P_COMP_BASE_W

    def __post_init__(self):
        for name in ("msize", "BR", "SNR", "BPS", "CPB", "tau", "T_lim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


def t_train(size, tau, BPS, CPB, s_ghz):
    """Local training time: ``size * tau * BPS * CPB`` cycles at ``s_ghz`` GHz."""
    if not s_ghz > 0:
        raise ValueError(f"client speed must be positive, got {s_ghz!r}")
    return size * tau * BPS * CPB / (s_ghz * 1e9)


def t_comm(msize, bw_mhz, SNR):
    """Download plus upload time over a Shannon-capacity link.

    Upload is taken to cost twice the download, hence the factor 3.
    """
    if not bw_mhz > 0:
        raise ValueError(f"bandwidth must be positive, got {bw_mhz!r}")
    if not SNR > 0:
        raise ValueError(f"SNR must be positive, got {SNR!r}")
    return 3.0 * msize / (bw_mhz * 1e6 * math.log2(1.0 + SNR))


def t_c2e2c(msize, m, BR, *, fedavg=False, parallel_backhaul=False):
    """Cloud-edge-cloud transfer time per round.

    ``parallel_backhaul`` drops the factor ``m`` (edges transfer concurrently).
    Always zero for FedAvg, which has no edge layer.
    """
    if fedavg or m == 0:
        return 0.0
    if not BR > 0:
        raise ValueError(f"cloud-edge bit rate must be positive, got {BR!r}")
    links = 1 if parallel_backhaul else m
    return 3.0 * msize * links / BR


def straggler_limit(mean_size, speed_mean, speed_std, bw_mean, bw_std, timing: TimingParams):
    """Response-time ceiling ``T_lim``.

    The time a client sitting three standard deviations below the mean in
    both speed and bandwidth needs to train an average partition and
    exchange the model.
    """
    s = speed_mean - 3.0 * speed_std
    bw = bw_mean - 3.0 * bw_std
    if s <= 0 or bw <= 0:
        raise ValueError(
            f"mean - 3*std must stay positive (speed {s:.4g} GHz, bandwidth {bw:.4g} MHz)"
        )
    return (t_train(mean_size, timing.tau, timing.BPS, timing.CPB, s)
            + t_comm(timing.msize, bw, timing.SNR))


def round_length(window, T_c2e2c):
    if window < 0:
        raise ValueError("compute window must be nonnegative")
    return T_c2e2c + window


def energy(T_comm_active, T_train_active, s_ghz, P_trans=P_TRANS_W, P_comp_base=P_COMP_BASE_W):
    """Device energy in joules; the compute power scales with the cube of the GHz figure."""
    return P_trans * T_comm_active + P_comp_base * s_ghz ** 3 * T_train_active
