"""Comparison methods: nearest-neighbour active sets, end-to-end regression,
and active-set classification."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .decoder import DecodedActiveSet, Provenance, assemble_and_solve
from .errors import DimensionMismatch, EmptyStore, InvalidParam, SingularSystem
from .network import FlowStructure, Network
from .surrogate import Mlp, TrainConfig, fit_supervised


def default_hidden(n):
    """Three hidden layers scaled to the input width (four weight layers in total)."""
    w = max(64, 4 * n)
    return (w, w, max(32, w // 2))


class KnnModel:
    """Stores training loads and their active sets; per-bit majority over k neighbours."""

    def __init__(self, loads, actives, k=3):
        if k < 1 or k % 2 == 0:
            raise InvalidParam("k must be a positive odd integer")
        loads = np.asarray(loads, dtype=float)
        actives = np.asarray(actives, dtype=bool)
        if len(loads) == 0:
            raise EmptyStore("kNN store is empty")
        if len(actives) != len(loads):
            raise DimensionMismatch("loads and active sets differ in count")
        self.k = k
        self.loads = loads
        self.actives = actives
        self.tree = cKDTree(loads)

    def predict(self, load):
        load = np.asarray(load, dtype=float)
        if load.shape != (self.loads.shape[1],):
            raise DimensionMismatch("query has the wrong dimension")
        kk = min(self.k, len(self.loads))
        _, idx = self.tree.query(load, k=kk)
        idx = np.atleast_1d(idx)
        votes = self.actives[idx].sum(axis=0)
        return votes * 2 > len(idx)


def knn_predict(model: KnnModel, load):
    return model.predict(load)


class EndToEndModel:
    """MLP regressing the stacked (x, f) solution; targets standardized per output."""

    def __init__(self, mlp: Mlp, out_mean, out_std, n):
        self.mlp = mlp
        self.out_mean = np.asarray(out_mean, dtype=float)
        self.out_std = np.asarray(out_std, dtype=float)
        self.n = n

    @classmethod
    def fit(cls, loads, solutions, n, hidden=None, config: TrainConfig | None = None):
        loads = np.asarray(loads, dtype=float)
        Y = np.asarray(solutions, dtype=float)
        hidden = hidden or default_hidden(loads.shape[1])
        config = config or TrainConfig(optimizer="adam", learning_rate=1e-3, epochs=50)
        mean = Y.mean(axis=0)
        std = Y.std(axis=0)
        std[~(std > 1e-12)] = 1.0
        mlp = Mlp.init([loads.shape[1], *hidden, Y.shape[1]], seed=config.seed)
        fit_supervised(mlp, loads, (Y - mean) / std, config, "mse")
        return cls(mlp, mean, std, n)

    def predict(self, load):
        out = self.mlp.predict(np.asarray(load, dtype=float)) * self.out_std + self.out_mean
        return out[:self.n], out[self.n:]


def e2e_predict(model: EndToEndModel, load):
    return model.predict(load)


class ClassifierModel:
    """MLP over the distinct active sets seen in training (one class each)."""

    def __init__(self, mlp: Mlp, classes):
        self.mlp = mlp
        self.classes = np.asarray(classes, dtype=bool)

    @classmethod
    def fit(cls, loads, actives, hidden=None, config: TrainConfig | None = None):
        loads = np.asarray(loads, dtype=float)
        actives = np.asarray(actives, dtype=bool)
        if len(loads) == 0:
            raise EmptyStore("no training samples")
        classes, labels = np.unique(actives, axis=0, return_inverse=True)
        labels = np.asarray(labels).ravel()
        hidden = hidden or default_hidden(loads.shape[1])
        config = config or TrainConfig(optimizer="adam", learning_rate=1e-3, epochs=50)
        mlp = Mlp.init([loads.shape[1], *hidden, len(classes)], seed=config.seed)
        if len(classes) > 1:
            fit_supervised(mlp, loads, labels, config, "ce")
        else:
            mlp.set_normalization(loads)
        return cls(mlp, classes)

    def predict(self, load):
        logits = self.mlp.predict(np.asarray(load, dtype=float))
        return self.classes[int(np.argmax(logits))].copy()


def clf_predict(model: ClassifierModel, load):
    return model.predict(load)


def solve_from_bits(network: Network, structure: FlowStructure, load, bits):
    """Linear solve for a predicted active set, with no budget enforcement.

    Too many constraints (or conflicting ones) raise SingularSystem; too few
    get the weighted minimum-norm completion.
    """
    active = DecodedActiveSet.from_bits(bits, network.n, budget=network.active_budget,
                                        provenance=Provenance.EXTERNAL)
    n, m = network.n, network.m
    bits = np.asarray(bits, dtype=bool)
    if np.any(bits[:n] & bits[n:2 * n]) or np.any(bits[2 * n:2 * n + m] & bits[2 * n + m:]):
        raise SingularSystem("a variable is predicted at both of its bounds")
    return assemble_and_solve(network, structure, load, active, completion=True)
