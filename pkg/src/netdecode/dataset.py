"""Load sampling, oracle labeling and JSONL persistence."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    Infeasible,
    InvalidParam,
    NetworkHashMismatch,
    ParseError,
    SchemaMismatch,
    YieldTooLow,
)
from .network import FlowStructure, Kind, Network
from .oracle import solve

SCHEMA_VERSION = 1


class Variation(str, Enum):
    LOW = "low"
    MEDIUM = "med"
    HIGH = "high"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"low": cls.LOW, "med": cls.MEDIUM, "medium": cls.MEDIUM, "high": cls.HIGH}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidParam(f"unknown variation {value!r}") from None


LOAD_RANGES = {
    Kind.NETWORK_FLOW: {Variation.LOW: (0.9, 1.1), Variation.MEDIUM: (0.8, 1.2), Variation.HIGH: (0.7, 1.3)},
    Kind.DC_OPF: {Variation.LOW: (0.8, 1.2), Variation.MEDIUM: (0.5, 1.5), Variation.HIGH: (0.2, 1.8)},
}


@dataclass
class SamplingConfig:
    variation: Variation = Variation.LOW
    sample_count: int = 1000
    test_fraction: float = 0.2
    seed: int = 0
    load_range: tuple | None = None     # overrides the kind-specific range
    max_retries: int = 3
    perturbation: float = 1e-6

    def __post_init__(self):
        self.variation = Variation.parse(self.variation)
        if self.sample_count < 0:
            raise InvalidParam("sample_count must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidParam("test_fraction must lie in (0, 1)")
        if self.load_range is not None:
            lo, hi = self.load_range
            if not 0.0 < lo <= 1.0 <= hi:
                raise InvalidParam("load range must satisfy 0 < lo <= 1 <= hi")
            self.load_range = (float(lo), float(hi))

    def range_for(self, kind: Kind):
        return self.load_range if self.load_range is not None else LOAD_RANGES[Kind(kind)][self.variation]

    def to_dict(self):
        d = asdict(self)
        d["variation"] = self.variation.value
        d["load_range"] = list(self.load_range) if self.load_range is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("load_range") is not None:
            d["load_range"] = tuple(d["load_range"])
        return cls(**d)


@dataclass
class Sample:
    load: np.ndarray
    objective: float
    mu: np.ndarray
    active: np.ndarray        # bool, 2n + 2m
    x: np.ndarray
    f: np.ndarray
    degenerate: bool = False
    alternative_optima: bool = False

    def to_json(self) -> dict:
        return {
            "load": self.load.tolist(),
            "objective": float(self.objective),
            "mu": self.mu.tolist(),
            "active": np.flatnonzero(self.active).tolist(),
            "x": self.x.tolist(),
            "f": self.f.tolist(),
            "degenerate": bool(self.degenerate),
            "alternative_optima": bool(self.alternative_optima),
        }

    @classmethod
    def from_json(cls, d: dict, active_len: int) -> "Sample":
        active = np.zeros(active_len, dtype=bool)
        active[np.asarray(d["active"], dtype=np.int64)] = True
        return cls(
            load=np.asarray(d["load"], dtype=float),
            objective=float(d["objective"]),
            mu=np.asarray(d["mu"], dtype=float),
            active=active,
            x=np.asarray(d["x"], dtype=float),
            f=np.asarray(d["f"], dtype=float),
            degenerate=bool(d.get("degenerate", False)),
            alternative_optima=bool(d.get("alternative_optima", False)),
        )


@dataclass
class Dataset:
    network_hash: str
    samples: list
    config: SamplingConfig
    split_index: int = 0          # samples[:split_index] train, rest test
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def train(self):
        return self.samples[:self.split_index]

    @property
    def test(self):
        return self.samples[self.split_index:]

    def arrays(self, which="all"):
        """Stack samples into arrays: loads, objectives, mus, actives."""
        items = {"all": self.samples, "train": self.train, "test": self.test}[which]
        return stack_samples(items)


def stack_samples(items):
    if not items:
        return np.empty((0, 0)), np.empty(0), np.empty((0, 0)), np.empty((0, 0), dtype=bool)
    return (np.array([s.load for s in items]), np.array([s.objective for s in items]),
            np.array([s.mu for s in items]), np.array([s.active for s in items]))


def sample_loads(network: Network, config: SamplingConfig, count=None, start=0):
    """Independent uniform draws in [lo * nominal, hi * nominal], one RNG stream per index."""
    if network.nominal_load is None:
        raise InvalidParam("network has no nominal_load")
    lo, hi = config.range_for(network.kind)
    count = config.sample_count if count is None else count
    nominal = network.nominal_load
    out = np.empty((count, network.n))
    for k in range(count):
        rng = np.random.default_rng((config.seed, start + k))
        out[k] = nominal * rng.uniform(lo, hi, network.n)
    return out


def _label(network, structure, load):
    sol = solve(network, structure, load)
    return Sample(load=np.asarray(load, dtype=float).copy(), objective=sol.objective, mu=sol.duals.mu.copy(),
                  active=sol.active_set.copy(), x=sol.x, f=sol.f, degenerate=sol.degenerate,
                  alternative_optima=sol.alternative_optima)


def generate(network: Network, structure: FlowStructure, config: SamplingConfig,
             min_draws_for_yield=20) -> Dataset:
    """Draw, label, and keep feasible primal-nondegenerate samples until ``sample_count`` are retained."""
    lo, hi = config.range_for(network.kind)
    nominal = network.nominal_load
    if nominal is None:
        raise InvalidParam("network has no nominal_load")
    samples = []
    stats = {"draws": 0, "infeasible": 0, "degenerate_discarded": 0, "perturbed": 0,
             "alternative_optima": 0}
    k = 0
    while len(samples) < config.sample_count:
        rng = np.random.default_rng((config.seed, k))
        k += 1
        stats["draws"] += 1
        load = nominal * rng.uniform(lo, hi, network.n)
        kept = None
        try:
            for attempt in range(config.max_retries + 1):
                s = _label(network, structure, load)
                if not s.degenerate:
                    kept = s
                    break
                if attempt < config.max_retries:
                    stats["perturbed"] += 1
                    scale = config.perturbation * float(np.linalg.norm(load))
                    load = load + rng.uniform(-scale, scale, network.n)
            if kept is None:
                stats["degenerate_discarded"] += 1
        except Infeasible:
            stats["infeasible"] += 1
        if kept is not None:
            stats["alternative_optima"] += int(kept.alternative_optima)
            samples.append(kept)
        discarded = stats["draws"] - len(samples)
        if stats["draws"] >= min_draws_for_yield and discarded > 0.9 * stats["draws"]:
            raise YieldTooLow(f"{discarded} of {stats['draws']} draws discarded",
                              draws=stats["draws"], discarded=discarded)
    ds = Dataset(network_hash=network.content_hash(), samples=samples, config=config, stats=stats)
    split(ds, config.test_fraction, config.seed)
    return ds


def split(ds: Dataset, test_fraction: float, seed: int) -> Dataset:
    """Seeded shuffle, then a prefix cut: first (1 - test_fraction) is train."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParam("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds.samples))
    ds.samples = [ds.samples[i] for i in order]
    ds.split_index = len(ds.samples) - int(round(test_fraction * len(ds.samples)))
    return ds


def save(ds: Dataset, path):
    path = Path(path)
    header = {
        "schema_version": SCHEMA_VERSION,
        "network_hash": ds.network_hash,
        "config": ds.config.to_dict(),
        "split_index": ds.split_index,
        "count": len(ds.samples),
        "active_length": int(ds.samples[0].active.size) if ds.samples else 0,
        "stats": ds.stats,
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in ds.samples:
            fh.write(json.dumps(s.to_json()) + "\n")


def load(path, network: Network | None = None) -> Dataset:
    """Read a JSONL dataset; check the network hash when a network is given."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or "schema_version" not in header:
        raise SchemaMismatch("missing dataset header")
    if header["schema_version"] != SCHEMA_VERSION:
        raise SchemaMismatch(f"schema version {header['schema_version']} != {SCHEMA_VERSION}")
    if network is not None and header["network_hash"] != network.content_hash():
        raise NetworkHashMismatch("dataset was generated for a different network")
    samples = []
    active_len = int(header.get("active_length", 0))
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=i) from None
        try:
            samples.append(Sample.from_json(d, active_len))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed sample: {exc}", line=i) from None
    return Dataset(network_hash=header["network_hash"], samples=samples,
                   config=SamplingConfig.from_dict(header["config"]),
                   split_index=int(header.get("split_index", len(samples))),
                   stats=header.get("stats", {}))
