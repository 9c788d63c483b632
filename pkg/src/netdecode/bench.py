"""Evaluation harness: feasibility, status accuracy, cost gap and core timing."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ClassifierModel, EndToEndModel, KnnModel, solve_from_bits
from .decoder import DecodeConfig, decode
from .errors import DecodeFailure, Infeasible, InvalidParam, SingularSystem
from .network import FlowStructure, Network
from .oracle import solve

FEASIBILITY_TOL = 0.05
METRIC_COLUMNS = (
    "method", "variation", "count", "binding_gen_accuracy", "binding_line_accuracy",
    "gen_exact", "line_exact", "active_set_exact", "feasibility_ratio", "mean_cost_gap",
    "core_time_per_instance", "wall_time_per_instance", "failures", "infeasible",
)


def feasibility_check(network: Network, structure: FlowStructure, x, edge_flows, load,
                      tol=FEASIBILITY_TOL) -> bool:
    """Nodal mismatch <= tol*max(1,|l_i|); x within tol of [0, x_bar]; flows within (1+tol) of the caps."""
    x = np.asarray(x, dtype=float)
    fl = np.asarray(edge_flows, dtype=float)
    load = np.asarray(load, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(fl))):
        return False
    f_fund = fl[structure.fundamental_edges]
    resid = np.abs(x + structure.reduced_incidence @ f_fund - load)
    if np.any(resid > tol * np.maximum(1.0, np.abs(load))):
        return False
    if np.any(x < -tol * network.gen_cap) or np.any(x > (1 + tol) * network.gen_cap):
        return False
    if np.any(fl > (1 + tol) * network.flow_cap_upper) or np.any(fl < -(1 + tol) * network.flow_cap_lower):
        return False
    return True


def bits_from_solution(network: Network, x, edge_flows, rel=0.01):
    """Active-set bits inferred from proximity to bounds (for methods that emit only a point)."""
    xb = network.gen_cap
    fu, fd = network.flow_cap_upper, network.flow_cap_lower
    return np.concatenate([
        x <= rel * xb,
        x >= (1 - rel) * xb,
        edge_flows <= -(1 - rel) * fd,
        edge_flows >= (1 - rel) * fu,
    ])


@dataclass
class MethodOutput:
    x: np.ndarray | None
    edge_flows: np.ndarray | None
    bits: np.ndarray | None
    core_time: float
    wall_time: float
    failed: bool = False
    stages: dict = field(default_factory=dict)


class Method:
    name = "method"

    def __init__(self, network: Network, structure: FlowStructure):
        self.network = network
        self.structure = structure

    def run(self, load) -> MethodOutput:  # pragma: no cover - interface
        raise NotImplementedError


class OracleMethod(Method):
    name = "oracle"

    def run(self, load):
        t0 = time.perf_counter()
        try:
            sol = solve(self.network, self.structure, load)
        except Infeasible:
            return MethodOutput(None, None, None, 0.0, time.perf_counter() - t0, failed=True)
        return MethodOutput(sol.x, sol.edge_flows, sol.active_set, sol.core_time, time.perf_counter() - t0,
                            stages={"simplex": sol.core_time})


class DecoderMethod(Method):
    name = "decoder"

    def __init__(self, network, structure, mlp=None, config: DecodeConfig | None = None, dictionary=None,
                 mu_provider=None):
        super().__init__(network, structure)
        self.mlp = mlp
        self.config = config or DecodeConfig()
        self.dictionary = dictionary
        self.mu_provider = mu_provider

    def run(self, load):
        t0 = time.perf_counter()
        mu = self.mu_provider(load) if self.mu_provider is not None else None
        try:
            sol = decode(self.network, self.structure, load, self.mlp, self.config, self.dictionary, mu_hat=mu)
        except DecodeFailure:
            return MethodOutput(None, None, None, 0.0, time.perf_counter() - t0, failed=True)
        stages = {k: sol.timings.get(k, 0.0) for k in ("gradient", "nodal", "lines", "solve")}
        return MethodOutput(sol.x, sol.edge_flows, sol.active.to_bits(), sol.core_time,
                            time.perf_counter() - t0, stages=stages)


class _BitsMethod(Method):
    def predict_bits(self, load):  # pragma: no cover - interface
        raise NotImplementedError

    def run(self, load):
        t0 = time.perf_counter()
        bits = self.predict_bits(load)
        t1 = time.perf_counter()
        try:
            sol = solve_from_bits(self.network, self.structure, load, bits)
        except SingularSystem:
            return MethodOutput(None, None, bits, 0.0, time.perf_counter() - t0, failed=True)
        core = (t1 - t0) + sol.timings["solve"]
        return MethodOutput(sol.x, sol.edge_flows, bits, core, time.perf_counter() - t0,
                            stages={"predict": t1 - t0, "solve": sol.timings["solve"]})


class KnnMethod(_BitsMethod):
    name = "knn"

    def __init__(self, network, structure, model: KnnModel):
        super().__init__(network, structure)
        self.model = model

    def predict_bits(self, load):
        return self.model.predict(load)


class ClassifierMethod(_BitsMethod):
    name = "clf"

    def __init__(self, network, structure, model: ClassifierModel):
        super().__init__(network, structure)
        self.model = model

    def predict_bits(self, load):
        return self.model.predict(load)


class EndToEndMethod(Method):
    name = "e2e"

    def __init__(self, network, structure, model: EndToEndModel):
        super().__init__(network, structure)
        self.model = model

    def run(self, load):
        t0 = time.perf_counter()
        x, f = self.model.predict(load)
        fl = self.structure.cycle_map @ f
        dt = time.perf_counter() - t0
        return MethodOutput(x, fl, bits_from_solution(self.network, x, fl), dt, dt, stages={"predict": dt})


@dataclass
class Metrics:
    method: str
    variation: str = ""
    count: int = 0
    binding_gen_accuracy: float = 0.0
    binding_line_accuracy: float = 0.0
    gen_exact: float = 0.0
    line_exact: float = 0.0
    active_set_exact: float = 0.0
    feasibility_ratio: float = 0.0
    mean_cost_gap: float = float("nan")
    core_time_per_instance: float = 0.0
    wall_time_per_instance: float = 0.0
    failures: int = 0
    infeasible: int = 0

    def row(self):
        d = asdict(self)
        return [d[c] for c in METRIC_COLUMNS]


def evaluate(method: Method, samples, network: Network, structure: FlowStructure, variation="",
             tol=FEASIBILITY_TOL) -> Metrics:
    """Run ``method`` on labeled samples and score it against the oracle labels."""
    n, m = network.n, network.m
    met = Metrics(method=method.name, variation=str(variation), count=len(samples))
    if not samples:
        return met
    gen_hits = line_hits = 0
    gen_ex = line_ex = full_ex = 0
    feasible = 0
    gaps = []
    core = wall = 0.0
    for s in samples:
        out = method.run(s.load)
        core += out.core_time
        wall += out.wall_time
        truth = s.active
        if out.bits is not None:
            g_ok = out.bits[:2 * n] == truth[:2 * n]
            l_ok = out.bits[2 * n:] == truth[2 * n:]
            gen_hits += int(g_ok.sum())
            line_hits += int(l_ok.sum())
            gen_ex += bool(g_ok.all())
            line_ex += bool(l_ok.all())
            full_ex += bool(g_ok.all() and l_ok.all())
        if out.failed:
            met.failures += 1
            continue
        if feasibility_check(network, structure, out.x, out.edge_flows, s.load, tol):
            feasible += 1
            cost = float(network.cost @ out.x)
            gaps.append((cost - s.objective) / max(abs(s.objective), 1e-12))
        else:
            met.infeasible += 1
    N = len(samples)
    met.binding_gen_accuracy = 100.0 * gen_hits / (N * 2 * n)
    met.binding_line_accuracy = 100.0 * line_hits / (N * 2 * m) if m else 100.0
    met.gen_exact = 100.0 * gen_ex / N
    met.line_exact = 100.0 * line_ex / N
    met.active_set_exact = 100.0 * full_ex / N
    met.feasibility_ratio = 100.0 * feasible / N
    met.mean_cost_gap = float(np.mean(gaps)) if gaps else float("nan")
    met.core_time_per_instance = core / N
    met.wall_time_per_instance = wall / N
    return met


def time_core(method: Method, loads, repeats=3):
    """Median and IQR over instances of the per-instance median core time; one warm-up run excluded."""
    if repeats < 3:
        raise InvalidParam("repeats must be >= 3")
    loads = list(loads)
    if not loads:
        return {"count": 0, "median": float("nan"), "iqr": float("nan"), "stages": {}, "samples": []}
    method.run(loads[0])
    per = []
    stages = {}
    for load in loads:
        runs = [method.run(load) for _ in range(repeats)]
        per.append(float(np.median([r.core_time for r in runs])))
        for key in runs[0].stages:
            stages.setdefault(key, []).append(float(np.median([r.stages.get(key, 0.0) for r in runs])))
    q1, med, q3 = np.percentile(per, [25, 50, 75])
    return {"count": len(per), "median": float(med), "iqr": float(q3 - q1),
            "stages": {k: float(np.median(v)) for k, v in stages.items()}, "samples": per}


def report(metrics, csv_path, json_path=None, config=None, counters=None):
    """One CSV row per method x variation, plus a JSON echo of everything."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for met in metrics:
            w.writerow(met.row())
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    payload = {"config": config or {}, "counters": counters or {}, "metrics": [asdict(m) for m in metrics]}
    Path(json_path).write_text(json.dumps(payload, indent=1, default=_json_default) + "\n")
    return csv_path, Path(json_path)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def read_report(csv_path):
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows
