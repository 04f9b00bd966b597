"""Round engines for HybridFL and the FedAvg / HierFAVG baselines.

A round is a function of the previous :class:`ProtocolState` and of seeded
substreams keyed by ``(seed, protocol, round, region)``; it returns a
:class:`RoundOutcome` and the next state. Client drop-out draws are keyed by
``(seed, round)`` only, so every protocol faces the same unreliable world.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import simclock
from .estimator import (RegionHistory, compute_q, estimate_theta, round_half_up,
                        selection_proportion)
from .simclock import TimingParams
from .topology import SimConfig, Topology
from .trainer import ModelParams, local_train
from .utils import substream


class ProtocolKind(str, enum.Enum):
    HYBRIDFL = "hybridfl"
    FEDAVG = "fedavg"
    HIERFAVG = "hierfavg"


@dataclass(frozen=True)
class World:
    """Everything a round needs that does not change between rounds."""

    config: SimConfig
    topology: Topology
    timing: TimingParams

    def completion_time(self, k):
        c = self.topology.clients[k]
        return (simclock.t_comm(self.timing.msize, c.bw, self.timing.SNR)
                + simclock.t_train(c.size, self.timing.tau, self.timing.BPS, self.timing.CPB, c.s))

    def full_energy(self, k):
        c = self.topology.clients[k]
        return simclock.energy(
            simclock.t_comm(self.timing.msize, c.bw, self.timing.SNR),
            simclock.t_train(c.size, self.timing.tau, self.timing.BPS, self.timing.CPB, c.s),
            c.s, self.timing.P_trans, self.timing.P_comp_base)

    def sizes(self, ids):
        return {k: self.topology.clients[k].size for k in ids}


@dataclass
class ProtocolState:
    global_model: ModelParams
    regional: list  # per-region model held by the edge (the cache)
    histories: list  # per-region RegionHistory, HybridFL only
    t: int = 0
    cloud_rounds: int = 0

    @classmethod
    def initial(cls, world: World, w0: ModelParams):
        topo, cfg = world.topology, world.config
        hist = [RegionHistory(len(ids), cfg.theta_init) for ids in topo.regions]
        return cls(global_model=w0, regional=[w0] * topo.m, histories=hist)


@dataclass
class RegionRoundState:
    region: int
    U: tuple
    X: tuple  # simulator ground truth; never shown to the estimator
    S: tuple
    completion: dict
    cached: ModelParams = field(repr=False)
    C_r: float = float("nan")
    theta_hat: float = float("nan")
    q_r: float = float("nan")
    edc: int = 0
    clamped: bool = False


@dataclass
class RoundOutcome:
    t: int
    protocol: str
    regions: list
    global_model: ModelParams = field(repr=False)
    window: float
    T_c2e2c: float
    round_length: float
    energy: np.ndarray = field(repr=False)  # joules per client, this round
    quota: int
    quota_met: bool
    edc_total: int
    cloud_aggregated: bool = True

    @property
    def S(self):
        return tuple(k for st in self.regions for k in st.S)


# -- selection and drop-out ---------------------------------------------------

def select_clients(ids, size, rng):
    """Uniform subset of ``ids`` without replacement, returned in id order."""
    ids = list(ids)
    if not 0 <= size <= len(ids):
        raise ValueError(f"cannot select {size} of {len(ids)} clients")
    if size == 0:
        return ()
    picked = rng.choice(len(ids), size=size, replace=False)
    return tuple(sorted(ids[i] for i in picked))


def realize_dropout(U, profiles, rng):
    """Clients of ``U`` that stay in the round, each with probability ``1 - dr``.

    ``rng`` is a generator (one uniform per member of ``U``, in order) or an
    array of pre-drawn uniforms indexed by client id.
    """
    U = tuple(U)
    if isinstance(rng, np.random.Generator):
        u = dict(zip(U, rng.random(len(U))))
    else:
        u = {k: rng[k] for k in U}
    return tuple(k for k in U if u[k] < 1.0 - profiles[k].dr)


def _dropout_draws(world: World, t):
    return substream(world.config.seed, "dropout", t).random(world.topology.n)


# -- aggregation --------------------------------------------------------------

def regional_aggregate(fresh, cache: ModelParams, sizes) -> ModelParams:
    """Data-size-weighted average over every client of a region.

    ``fresh`` maps submitting client ids to their trained models; every other
    id in ``sizes`` contributes ``cache`` instead.
    """
    total = sum(sizes.values())
    if total <= 0:
        raise ValueError("region holds no data")
    theta = np.zeros_like(cache.theta)
    for k in sorted(sizes):
        model = fresh.get(k, cache)
        theta += (sizes[k] / total) * model.theta
    return cache.with_theta(theta)


def edc(S_r, sizes):
    return int(sum(sizes[k] for k in S_r))


def edc_total(edcs):
    return int(sum(edcs))


def cloud_aggregate(regional, edcs, previous: ModelParams) -> ModelParams:
    """EDC-weighted average of regional models; ``previous`` if nothing was submitted."""
    total = edc_total(edcs)
    if any(e < 0 for e in edcs):
        raise ValueError("EDC must be nonnegative")
    if total == 0:
        return previous
    theta = np.zeros_like(previous.theta)
    for model, e in zip(regional, edcs):
        if e > 0:
            theta += (e / total) * model.theta
    return previous.with_theta(theta)


def flatten_weights(edcs, region_sizes):
    """Single-level weight of every client: ``EDC_r / EDC * |D_k| / |D^r|``.

    ``region_sizes`` holds one ``{client id: partition size}`` map per region.
    """
    total = edc_total(edcs)
    if total <= 0:
        raise ValueError("flattened weights are undefined when EDC is zero")
    gamma = {}
    for e, sizes in zip(edcs, region_sizes):
        d_r = sum(sizes.values())
        for k, size in sizes.items():
            gamma[k] = (e / total) * (size / d_r)
    return gamma


def weighted_mean(models, sizes, previous: ModelParams) -> ModelParams:
    total = sum(sizes[k] for k in models)
    if not models or total == 0:
        return previous
    theta = np.zeros_like(previous.theta)
    for k in sorted(models):
        theta += (sizes[k] / total) * models[k].theta
    return previous.with_theta(theta)


# -- local training -------------------------------------------------------------

def train_clients(world: World, starts, ids):
    """Train every client in ``ids`` from ``starts[k]``; results keyed by id."""
    cfg = world.config
    ids = sorted(ids)

    def one(k):
        data = world.topology.client_data(k)
        if len(data) == 0:
            return starts[k]
        return local_train(starts[k], data, cfg.tau, cfg.eta)

    if cfg.n_jobs > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            models = list(pool.map(one, ids))
    else:
        models = [one(k) for k in ids]
    return dict(zip(ids, models))


def _energy(world: World, survivors, cutoff):
    """Per-client joules: survivors are metered up to ``cutoff`` seconds."""
    out = np.zeros(world.topology.n)
    for k in survivors:
        c = world.completion_time(k)
        frac = 1.0 if c <= cutoff else cutoff / c
        out[k] = frac * world.full_energy(k)
    return out


def _quota(config: SimConfig):
    return max(1, round_half_up(config.C * config.n))


# -- round engines ------------------------------------------------------------------

def run_round_hybrid(world: World, state: ProtocolState, t):
    cfg, topo, timing = world.config, world.topology, world.timing
    name = ProtocolKind.HYBRIDFL.value
    draws = _dropout_draws(world, t)
    quota = _quota(cfg)

    regions = []
    for r, ids in enumerate(topo.regions):
        theta_hat = estimate_theta(state.histories[r], cfg.theta_window)
        decision = selection_proportion(cfg.C, theta_hat, len(ids))
        U = select_clients(ids, decision.U_r_size, substream(cfg.seed, name, "select", t, r))
        X = realize_dropout(U, topo.clients, draws)
        regions.append(RegionRoundState(
            region=r, U=U, X=X, S=(), completion={k: world.completion_time(k) for k in X},
            cached=state.global_model if cfg.cache == "global" else state.regional[r],
            C_r=decision.C_r, theta_hat=theta_hat,
            clamped=decision.clamped))

    # Global completion order; the quota-th finisher before T_lim closes the window.
    finishers = sorted((c, k) for st in regions for k, c in st.completion.items()
                       if c <= timing.T_lim)
    submitted = finishers[:quota]
    quota_met = len(submitted) == quota
    window = submitted[-1][0] if quota_met else timing.T_lim
    in_S = {k for _, k in submitted}

    fresh = train_clients(world, {k: state.global_model for k in in_S}, in_S)
    regional_models, edcs = [], []
    for st in regions:
        st.S = tuple(k for k in st.X if k in in_S)
        sizes = world.sizes(topo.regions[st.region])
        st.edc = edc(st.S, sizes)
        regional_models.append(regional_aggregate(
            {k: fresh[k] for k in st.S}, st.cached, sizes))
        edcs.append(st.edc)
    w = cloud_aggregate(regional_models, edcs, state.global_model)

    for st in regions:
        n_r = len(topo.regions[st.region])
        st.q_r = compute_q(len(st.S), cfg.C, n_r)
        state.histories[st.region].append(st.C_r, st.q_r, len(st.S))

    T_c2e2c = simclock.t_c2e2c(timing.msize, topo.m, timing.BR,
                               parallel_backhaul=cfg.parallel_backhaul)
    energy = _energy(world, [k for st in regions for k in st.X], window)
    state.global_model = w
    state.regional = regional_models
    state.t = t
    state.cloud_rounds += 1
    return RoundOutcome(
        t=t, protocol=name, regions=regions, global_model=w, window=window,
        T_c2e2c=T_c2e2c, round_length=simclock.round_length(window, T_c2e2c),
        energy=energy, quota=quota, quota_met=quota_met, edc_total=edc_total(edcs))


def _synchronous_window(world: World, U, X):
    """Wait for every selected client, up to ``T_lim``; a drop-out never reports."""
    T_lim = world.timing.T_lim
    if not U:
        return 0.0
    if len(X) < len(U):
        return T_lim
    return min(T_lim, max(world.completion_time(k) for k in X))


def run_round_fedavg(world: World, state: ProtocolState, t):
    cfg, topo, timing = world.config, world.topology, world.timing
    name = ProtocolKind.FEDAVG.value
    draws = _dropout_draws(world, t)
    quota = _quota(cfg)
    U = select_clients(range(topo.n), quota, substream(cfg.seed, name, "select", t))
    X = realize_dropout(U, topo.clients, draws)
    S = tuple(k for k in X if world.completion_time(k) <= timing.T_lim)
    window = _synchronous_window(world, U, X)

    fresh = train_clients(world, {k: state.global_model for k in S}, S)
    w = weighted_mean(fresh, world.sizes(S), state.global_model)

    regions = []
    for r, ids in enumerate(topo.regions):
        members = set(ids)
        st = RegionRoundState(
            region=r, U=tuple(k for k in U if k in members),
            X=tuple(k for k in X if k in members), S=tuple(k for k in S if k in members),
            completion={k: world.completion_time(k) for k in X if k in members},
            cached=state.global_model, C_r=cfg.C)
        st.edc = edc(st.S, world.sizes(st.S))
        regions.append(st)

    state.global_model = w
    state.t = t
    state.cloud_rounds += 1
    return RoundOutcome(
        t=t, protocol=name, regions=regions, global_model=w, window=window, T_c2e2c=0.0,
        round_length=simclock.round_length(window, 0.0),
        energy=_energy(world, X, timing.T_lim), quota=quota, quota_met=len(S) >= quota,
        edc_total=edc_total(st.edc for st in regions))


def run_round_hierfavg(world: World, state: ProtocolState, t):
    cfg, topo, timing = world.config, world.topology, world.timing
    name = ProtocolKind.HIERFAVG.value
    draws = _dropout_draws(world, t)

    regions, windows, survivors = [], [], []
    for r, ids in enumerate(topo.regions):
        size = min(len(ids), max(1, round_half_up(cfg.C * len(ids))))
        U = select_clients(ids, size, substream(cfg.seed, name, "select", t, r))
        X = realize_dropout(U, topo.clients, draws)
        S = tuple(k for k in X if world.completion_time(k) <= timing.T_lim)
        windows.append(_synchronous_window(world, U, X))
        survivors.extend(X)
        regions.append(RegionRoundState(
            region=r, U=U, X=X, S=S, completion={k: world.completion_time(k) for k in X},
            cached=state.regional[r], C_r=size / len(ids)))

    starts = {k: state.regional[st.region] for st in regions for k in st.S}
    fresh = train_clients(world, starts, starts)
    edge_models = []
    for st in regions:
        sizes = world.sizes(topo.regions[st.region])
        st.edc = edc(st.S, sizes)
        edge_models.append(regional_aggregate({k: fresh[k] for k in st.S}, st.cached, sizes))

    cloud = t % cfg.kappa2 == 0
    w = state.global_model
    if cloud:
        data = [topo.region_data(r) for r in range(topo.m)]
        theta = sum((d / sum(data)) * em.theta for d, em in zip(data, edge_models))
        w = w.with_theta(theta)
        edge_models = [w] * topo.m
        state.cloud_rounds += 1

    window = max(windows)
    T_c2e2c = simclock.t_c2e2c(timing.msize, topo.m, timing.BR,
                               parallel_backhaul=cfg.parallel_backhaul)
    state.global_model = w
    state.regional = edge_models
    state.t = t
    quota = sum(len(st.U) for st in regions)
    n_sub = sum(len(st.S) for st in regions)
    return RoundOutcome(
        t=t, protocol=name, regions=regions, global_model=w, window=window, T_c2e2c=T_c2e2c,
        round_length=simclock.round_length(window, T_c2e2c),
        energy=_energy(world, survivors, timing.T_lim), quota=quota, quota_met=n_sub >= quota,
        edc_total=edc_total(st.edc for st in regions), cloud_aggregated=cloud)


ROUND_ENGINES = {
    ProtocolKind.HYBRIDFL: run_round_hybrid,
    ProtocolKind.FEDAVG: run_round_fedavg,
    ProtocolKind.HIERFAVG: run_round_hierfavg,
}


def run_round(kind, world: World, state: ProtocolState, t):
    return ROUND_ENGINES[ProtocolKind(kind)](world, state, t)
