"""Simulation configuration and construction of the cloud/edge/client world."""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import trainer
from .simclock import BITS_PER_MB, TimingParams, straggler_limit
from .utils import largest_remainder, positive_normal, substream


class ConfigError(ValueError):
    pass


PROTOCOLS = ("hybridfl", "fedavg", "hierfavg")
DATASETS = ("synthetic-regression", "aerofoil", "digits", "synthetic-classification")


@dataclass(frozen=True)
class SimConfig:
    # population
    n: int = 15
    m: int = 3
    pop_mean: float = 5.0
    pop_std: float = 1.5
    region_sizes: typing.Optional[tuple] = None
    # learning
    C: float = 0.3
    tau: int = 5
    t_max: int = 600
    eta: float = 1e-4
    hidden: tuple = (16, 16)
    seed: int = 0
    # clients (speed GHz, bandwidth MHz)
    speed_mean: float = 0.5
    speed_std: float = 0.1
    bw_mean: float = 0.5
    bw_std: float = 0.1
    dr_mean: float = 0.3
    dr_std: float = 0.05
    # per-region mean survival probability; overrides dr_mean/dr_std when set
    reliability_means: typing.Optional[tuple] = None
    reliability_std: float = 0.15
    # channel and workload
    SNR: float = 100.0
    BR_mbps: float = 1000.0
    msize_mb: float = 5.0
    BPS: float = 384.0
    CPB: float = 300.0
    T_lim: typing.Optional[float] = None
    parallel_backhaul: bool = False
    # data
    dataset: str = "synthetic-regression"
    dataset_path: str = ""
    dataset_size: int = 1503
    n_features: int = 5
    noise_std: float = 0.3
    partition: str = "gaussian"
    data_mean: float = 100.0
    data_std: float = 30.0
    label_affinity: float = 0.75
    # protocol
    protocol: str = "hybridfl"
    kappa2: int = 10
    theta_init: float = 0.5
    theta_window: typing.Optional[int] = None
    # what a HybridFL edge substitutes for clients without a fresh model:
    # "regional" = its own w^r(t-1), "global" = the w(t-1) it last received
    cache: str = "regional"
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("region_sizes", "reliability_means", "hidden"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n >= 1 and self.m >= 1, "n and m must be positive")
        need(self.m <= self.n, f"m={self.m} edge nodes but only n={self.n} clients")
        need(0 < self.C <= 1, f"C must lie in (0, 1], got {self.C}")
        need(self.tau >= 1, "tau must be at least 1")
        need(self.t_max >= 0, "t_max must be nonnegative")
        need(self.eta >= 0, "eta must be nonnegative")
        need(self.pop_mean > 0 and self.pop_std >= 0, "region population N(mean, std) needs mean > 0, std >= 0")
        need(self.speed_mean > 0 and self.speed_std >= 0, "speed distribution needs mean > 0, std >= 0")
        need(self.bw_mean > 0 and self.bw_std >= 0, "bandwidth distribution needs mean > 0, std >= 0")
        need(self.dr_std >= 0 and self.reliability_std >= 0, "standard deviations must be nonnegative")
        for name in ("SNR", "BR_mbps", "msize_mb", "BPS", "CPB"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        need(self.T_lim is None or self.T_lim > 0, "T_lim must be positive")
        if self.region_sizes is not None:
            need(len(self.region_sizes) == self.m, "region_sizes needs one entry per edge node")
            need(min(self.region_sizes) >= 1, "every region needs a client")
            need(sum(self.region_sizes) == self.n, "region_sizes must sum to n")
        if self.reliability_means is not None:
            need(len(self.reliability_means) == self.m, "reliability_means needs one entry per edge node")
        need(self.protocol in PROTOCOLS, f"protocol must be one of {PROTOCOLS}")
        need(self.kappa2 >= 1, "kappa2 must be at least 1")
        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.partition in ("gaussian", "label-skew"), "partition must be gaussian or label-skew")
        need(self.data_mean > 0 and self.data_std >= 0, "partition sizes N(mean, std) needs mean > 0")
        need(0 <= self.label_affinity <= 1, "label_affinity must lie in [0, 1]")
        need(0 < self.theta_init <= 1, "theta_init must lie in (0, 1]")
        need(self.theta_window is None or self.theta_window >= 1, "theta_window must be >= 1")
        need(self.cache in ("regional", "global"), "cache must be regional or global")
        need(self.n_jobs >= 1, "n_jobs must be at least 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def msize(self):
        return self.msize_mb * BITS_PER_MB

    @property
    def BR(self):
        return self.BR_mbps * 1e6

    @classmethod
    def from_file(cls, path, **overrides):
        """Read a flat ``key = value`` file; keys are the field names above."""
        return cls.from_mapping({**read_config_file(path), **overrides})

    @classmethod
    def from_mapping(cls, values):
        hints = typing.get_type_hints(cls)
        kwargs = {k: _coerce(hints[k], v) for k, v in values.items()}
        return cls(**kwargs)

    def to_lines(self):
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return out


def read_config_file(path):
    """Raw ``{key: string}`` pairs of a flat config file; ``#`` and ``;`` start comments."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[sim]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = dict(parser["sim"])
    unknown = set(values) - {f.name for f in dataclasses.fields(SimConfig)}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return values


def _coerce(hint, value):
    if not isinstance(value, str):
        return value
    value = value.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union:  # Optional[...]
        if value.lower() in ("", "none"):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    if hint is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if hint is tuple:
        parts = [p for p in value.replace(",", " ").split() if p]
        return tuple(float(p) if any(c in p for c in ".eE") else int(p) for p in parts)
    try:
        if hint is int:
            return int(value)
        if hint is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"expected {hint.__name__}, got {value!r}") from None
    return value


@dataclass(frozen=True)
class ClientProfile:
    id: int
    region: int
    data: np.ndarray = field(repr=False)  # sample indices
    s: float  # GHz
    bw: float  # MHz
    dr: float  # per-round drop-out probability

    @property
    def size(self):
        return len(self.data)

    @property
    def reliability(self):
        return 1.0 - self.dr


@dataclass(frozen=True)
class Topology:
    regions: tuple  # tuple of tuples of client ids
    clients: tuple
    dataset: trainer.Dataset = field(repr=False)

    @property
    def n(self):
        return len(self.clients)

    @property
    def m(self):
        return len(self.regions)

    def region_size(self, r):
        return len(self.regions[r])

    def region_data(self, r):
        return sum(self.clients[k].size for k in self.regions[r])

    def client_data(self, k):
        return self.dataset.subset(self.clients[k].data)

    def fingerprint(self):
        """Tuple that compares equal exactly when two topologies are identical."""
        return (self.regions,
                tuple((c.id, c.region, c.data.tobytes(), c.s, c.bw, c.dr) for c in self.clients),
                self.dataset.features.tobytes(), self.dataset.targets.tobytes())


def partition_gaussian(total, n, mean, std, seed):
    """Partition sizes drawn from ``N(mean, std^2)`` and rescaled to sum to ``total``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if total < n:
        raise ValueError(f"cannot give {n} clients at least one sample out of {total}")
    if mean <= 0 or std < 0:
        raise ValueError("partition sizes need mean > 0 and std >= 0")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    draws = positive_normal(rng, mean, std, n)
    return [int(s) for s in largest_remainder(draws, total, minimum=1)]


def partition_label_skew(labels, n, affinity, seed, n_groups=10):
    """Client index for every sample.

    With probability ``affinity`` a sample of class ``y`` goes to a uniformly
    chosen client whose id is congruent to ``y`` modulo ``n_groups``;
    otherwise to a uniformly chosen client.
    """
    labels = np.asarray(labels, dtype=int)
    if not 0 <= affinity <= 1:
        raise ValueError("affinity must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    if labels.size == 0:
        return np.zeros(0, dtype=int)
    groups = labels % n_groups
    if affinity > 0:
        missing = sorted(set(groups.tolist()) - set(range(min(n, n_groups))))
        if missing:
            raise ValueError(f"no client id congruent to classes {missing} (n={n})")
    skewed = rng.random(labels.size) < affinity
    out = rng.integers(0, n, labels.size)
    for g in np.unique(groups[skewed]):
        pool = np.arange(g, n, n_groups)
        rows = np.flatnonzero(skewed & (groups == g))
        out[rows] = pool[rng.integers(0, pool.size, rows.size)]
    return out


def make_dataset(config: SimConfig) -> trainer.Dataset:
    if config.dataset == "aerofoil":
        return trainer.load_aerofoil(config.dataset_path)
    if config.dataset == "digits":
        return trainer.load_digits_dataset()
    rng_seed = substream(config.seed, "dataset").integers(2**63)
    if config.dataset == "synthetic-classification":
        return trainer.synthesize_classification(config.dataset_size, config.n_features, 10, rng_seed)
    return trainer.synthesize_regression(config.dataset_size, config.n_features,
                                         config.noise_std, rng_seed)


def region_populations(config: SimConfig, rng):
    if config.region_sizes is not None:
        return [int(s) for s in config.region_sizes]
    draws = positive_normal(rng, config.pop_mean, config.pop_std, config.m)
    return [int(s) for s in largest_remainder(draws, config.n, minimum=1)]


def build_topology(config: SimConfig, dataset: trainer.Dataset = None) -> Topology:
    config.validate()
    if dataset is None:
        dataset = make_dataset(config)
    sizes = region_populations(config, substream(config.seed, "topology", "regions"))
    regions, start = [], 0
    for size in sizes:
        regions.append(tuple(range(start, start + size)))
        start += size
    region_of = np.repeat(np.arange(config.m), sizes)

    rng = substream(config.seed, "topology", "data")
    if config.partition == "label-skew":
        if dataset.task != "classification":
            raise ConfigError("label-skew partition needs a classification dataset")
        owner = partition_label_skew(dataset.targets, config.n, config.label_affinity, rng)
        data = [np.flatnonzero(owner == k) for k in range(config.n)]
    else:
        counts = partition_gaussian(len(dataset), config.n, config.data_mean, config.data_std, rng)
        perm = rng.permutation(len(dataset))
        bounds = np.cumsum([0] + counts)
        data = [np.sort(perm[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]

    rng = substream(config.seed, "topology", "clients")
    speeds = positive_normal(rng, config.speed_mean, config.speed_std, config.n)
    bws = positive_normal(rng, config.bw_mean, config.bw_std, config.n)
    if config.reliability_means is not None:
        means = np.asarray(config.reliability_means, dtype=float)[region_of]
        reliab = np.clip(rng.normal(means, config.reliability_std), 0.0, 1.0)
        drs = 1.0 - reliab
    else:
        drs = np.clip(rng.normal(config.dr_mean, config.dr_std, config.n), 0.0, 1.0)

    clients = tuple(
        ClientProfile(id=k, region=int(region_of[k]), data=data[k],
                      s=float(speeds[k]), bw=float(bws[k]), dr=float(drs[k]))
        for k in range(config.n)
    )
    return Topology(regions=tuple(regions), clients=clients, dataset=dataset)


def timing_params(config: SimConfig, topology: Topology = None) -> TimingParams:
    """Timing constants, with ``T_lim`` from the straggler rule unless overridden."""
    base = TimingParams(msize=config.msize, BR=config.BR, SNR=config.SNR,
                        BPS=config.BPS, CPB=config.CPB, tau=config.tau)
    if config.T_lim is not None:
        return dataclasses.replace(base, T_lim=config.T_lim)
    total = len(topology.dataset) if topology is not None else config.dataset_size
    t_lim = straggler_limit(total / config.n, config.speed_mean, config.speed_std,
                            config.bw_mean, config.bw_std, base)
    return dataclasses.replace(base, T_lim=t_lim)
