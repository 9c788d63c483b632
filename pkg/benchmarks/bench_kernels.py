"""Compare the compiled and numpy kernel backends on representative workloads.

    python benchmarks/bench_kernels.py [--nodes 100] [--repeats 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from netdecode import _kernels
from netdecode.network import build_flow_structure, random_connected_network
from netdecode.oracle import to_standard_form
from netdecode.simplex import solve_lp, unit_columns


def workloads(n_nodes, seed=0):
    net = random_connected_network(n_nodes, 0.7, seed=seed)
    st = build_flow_structure(net)
    lp = to_standard_form(net, st, net.nominal_load)
    units = unit_columns(lp.M)
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((120, 400))
    u_true = np.zeros(400)
    u_true[rng.choice(400, 10, replace=False)] = rng.standard_normal(10)
    rhs = K @ u_true
    step = 1.0 / np.linalg.norm(K, 2) ** 2
    mu = rng.standard_normal(2000)
    c = rng.standard_normal(2000)
    return {
        "simplex": lambda k: solve_lp(lp.M, lp.b, lp.c, units=units, kernels=k),
        "iht": lambda k: k.iht(K.T.copy(), rhs, 10, step, 500, 1e-10),
        "decode_nodal": lambda k: k.decode_nodal(mu, c, 0.05),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    backends = _kernels.backends()
    if "cython" not in backends:
        print("compiled backend not built; run `python setup.py build_ext --inplace`")
    print(f"{'kernel':14s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in workloads(args.nodes).items():
        times = {}
        for b, mod in backends.items():
            fn(mod)
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeats))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:14s} " + " ".join(f"{times[b] * 1e3:10.3f}ms" for b in backends) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
