"""ReLU MLP surrogate of the optimal cost, with closed-form input and loss gradients.

Inputs are standardized inside the model (``z = (l - mean) / std``), so every
gradient reported in load space is the standardized one divided by ``std``.
At a kink (pre-activation exactly zero) the unit counts as active.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, Diverged, InvalidParam, ParseError, SchemaMismatch

WEIGHTS_MAGIC = b"NDMLP\x00"
WEIGHTS_VERSION = 1


class Mlp:
    """Fully connected ReLU network; the last layer is linear."""

    def __init__(self, widths, weights=None, biases=None, in_mean=None, in_std=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidParam("widths need an input and an output layer, all >= 1")
        self.widths = widths
        if weights is None:
            weights = [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])]
        if biases is None:
            biases = [np.zeros(o) for o in widths[1:]]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[k + 1], widths[k]) or b.shape != (widths[k + 1],):
                raise DimensionMismatch(f"layer {k} parameters do not match widths {widths}")
        n = widths[0]
        self.in_mean = np.zeros(n) if in_mean is None else np.asarray(in_mean, dtype=float).copy()
        std = np.ones(n) if in_std is None else np.asarray(in_std, dtype=float).copy()
        std[~(std > 0)] = 1.0
        self.in_std = std

    @classmethod
    def init(cls, widths, seed=0):
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights = [rng.normal(0.0, np.sqrt(2.0 / i), (o, i)) for i, o in zip(widths[:-1], widths[1:])]
        return cls(widths, weights=weights)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def set_normalization(self, loads, mode="per_input"):
        """Center on the training mean; scale per input or by one pooled std."""
        loads = np.asarray(loads, dtype=float)
        self.in_mean = loads.mean(axis=0)
        std = loads.std(axis=0)
        if mode == "pooled":
            pooled = float(np.sqrt(np.mean(std ** 2)))
            std = np.full_like(std, pooled if pooled > 0 else 1.0)
        elif mode != "per_input":
            raise InvalidParam(f"unknown normalization {mode!r}")
        std[~(std > 0)] = 1.0
        self.in_std = std

    def copy(self):
        return Mlp(self.widths, self.weights, self.biases, self.in_mean, self.in_std)

    # -- parameters as one flat vector -----------------------------------------

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w.ravel())
            out.append(b)
        return np.concatenate(out)

    def set_parameters(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.parameter_count:
            raise DimensionMismatch("parameter vector has the wrong length")
        pos = 0
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = theta[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[k] = theta[pos:pos + b.size].copy()
            pos += b.size

    @property
    def parameter_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- evaluation ------------------------------------------------------------

    def _standardize(self, loads):
        X = np.asarray(loads, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input has {X.shape[1]} entries, model expects {self.input_dim}")
        return (X - self.in_mean) / self.in_std, single

    def _forward_cache(self, Z):
        acts = [Z]
        masks = []
        a = Z
        for k in range(self.depth - 1):
            h = a @ self.weights[k].T + self.biases[k]
            mask = h >= 0.0
            masks.append(mask)
            a = np.where(mask, h, 0.0)
            acts.append(a)
        out = a @ self.weights[-1].T + self.biases[-1]
        return out, acts, masks

    def predict(self, loads):
        """Raw network output, shape (batch, out) or (out,)."""
        Z, single = self._standardize(loads)
        out, _, _ = self._forward_cache(Z)
        return out[0] if single else out

    def forward(self, loads):
        """Scalar surrogate value(s) g(l)."""
        if self.output_dim != 1:
            raise DimensionMismatch("forward is defined for scalar-output models")
        out = self.predict(loads)
        return float(out[0]) if np.ndim(out) == 1 else out[:, 0]

    def activation_pattern(self, loads):
        Z, _ = self._standardize(loads)
        _, _, masks = self._forward_cache(Z)
        return [m.copy() for m in masks]

    def _deltas(self, masks, batch):
        """d(output)/d(pre-activation) per hidden layer, output layer first is ones."""
        deltas = [None] * self.depth
        deltas[-1] = np.ones((batch, 1))
        for k in range(self.depth - 2, -1, -1):
            deltas[k] = (deltas[k + 1] @ self.weights[k + 1]) * masks[k]
        return deltas

    def input_gradient(self, loads):
        """Gradient of the scalar output w.r.t. the raw load vector(s)."""
        if self.output_dim != 1:
            raise DimensionMismatch("input_gradient is defined for scalar-output models")
        Z, single = self._standardize(loads)
        _, _, masks = self._forward_cache(Z)
        deltas = self._deltas(masks, Z.shape[0])
        G = (deltas[0] @ self.weights[0]) / self.in_std
        return G[0] if single else G

    def backward(self, loads, d_out):
        """Plain backprop of ``sum(d_out * output)``: returns (weight grads, bias grads)."""
        Z, _ = self._standardize(loads)
        _, acts, masks = self._forward_cache(Z)
        delta = np.atleast_2d(np.asarray(d_out, dtype=float))
        gW = [None] * self.depth
        gb = [None] * self.depth
        for k in range(self.depth - 1, -1, -1):
            gW[k] = delta.T @ acts[k]
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k]) * masks[k - 1]
        return gW, gb


# -- the three-term loss -------------------------------------------------------

@dataclass
class TrainConfig:
    gamma1: float = 1.0
    gamma2: float = 0.1
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    epsilon_margin: float = 0.05
    holdout_fraction: float = 0.1
    optimizer: str = "sgd"          # "sgd" (momentum) or "adam"
    lr_decay: float = 1.0           # multiplicative per-epoch learning-rate factor
    normalization: str = "per_input"  # or "pooled"
    output_init_scale: float = 1.0  # shrinks the initial output-layer weights

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise InvalidParam("gamma1 and gamma2 must be >= 0")
        if not self.learning_rate >= 0:
            raise InvalidParam("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidParam("batch_size must be >= 1 and epochs >= 0")
        if self.epsilon_margin < 0:
            raise InvalidParam("epsilon_margin must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParam(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossBreakdown:
    cost_term: float
    grad_term: float
    hamming_term: float
    total: float

    def as_dict(self):
        return asdict(self)


def hamming_surrogate(gap, status, margin):
    """Per-node squared-hinge penalty and its derivative w.r.t. ``gap = mu_hat - c``.

    status +1 (at upper): zero iff gap >= margin; -1 (at zero): zero iff
    gap <= -margin; 0 (interior): zero iff |gap| <= margin / 2.
    """
    gap = np.asarray(gap, dtype=float)
    status = np.asarray(status)
    up = np.maximum(0.0, margin - gap)
    lo = np.maximum(0.0, margin + gap)
    mid = np.maximum(0.0, np.abs(gap) - 0.5 * margin)
    val = np.where(status > 0, up ** 2, np.where(status < 0, lo ** 2, mid ** 2))
    der = np.where(status > 0, -2.0 * up, np.where(status < 0, 2.0 * lo, 2.0 * mid * np.sign(gap)))
    return val, der


def nodal_targets(active, n):
    """+1 at upper, -1 at zero, 0 interior, from active-set bit vectors (batch, 2n+2m)."""
    active = np.atleast_2d(np.asarray(active, dtype=bool))
    st = np.zeros((active.shape[0], n), dtype=np.int8)
    st[active[:, :n]] = -1
    st[active[:, n:2 * n]] = 1
    return st


def _batch_terms(mlp, loads, J, mu, status, cost, config):
    Z, _ = mlp._standardize(loads)
    out, acts, masks = mlp._forward_cache(Z)
    y = out[:, 0]
    deltas = mlp._deltas(masks, Z.shape[0])
    G = (deltas[0] @ mlp.weights[0]) / mlp.in_std
    r = y - J
    eg = G - mu
    hv, hd = hamming_surrogate(G - cost, status, config.epsilon_margin)
    terms = (r ** 2, (eg ** 2).sum(axis=1), hv.sum(axis=1))
    return Z, y, r, G, eg, hd, acts, masks, deltas, terms


def loss(mlp, loads, J, mu, active, cost, config: TrainConfig) -> LossBreakdown:
    """Batch-mean loss: (g - J)^2 + gamma1 |grad g - mu|^2 + gamma2 * hamming surrogate."""
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    J = np.atleast_1d(np.asarray(J, dtype=float))
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    if mu.shape != loads.shape or J.shape[0] != loads.shape[0]:
        raise DimensionMismatch("labels do not match the batch")
    status = nodal_targets(active, loads.shape[1])
    *_, terms = _batch_terms(mlp, loads, J, mu, status, np.asarray(cost, dtype=float), config)
    c, g, h = (float(t.mean()) for t in terms)
    return LossBreakdown(c, g, h, c + config.gamma1 * g + config.gamma2 * h)


def loss_gradient(mlp, loads, J, mu, active, cost, config: TrainConfig, status=None):
    """Exact gradient of the batch-mean loss w.r.t. all parameters (masks held fixed).

    Returns (weight grads, bias grads, LossBreakdown).
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    J = np.atleast_1d(np.asarray(J, dtype=float))
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    if loads.shape[0] == 0:
        raise InvalidParam("empty batch")
    if status is None:
        status = nodal_targets(active, loads.shape[1])
    cost = np.asarray(cost, dtype=float)
    Z, y, r, G, eg, hd, acts, masks, deltas, terms = _batch_terms(mlp, loads, J, mu, status, cost, config)
    B = Z.shape[0]
    # d(loss)/d(grad in standardized space)
    U = (2.0 * config.gamma1 * eg + config.gamma2 * hd) / mlp.in_std
    # forward linear pass of U through the masked network
    vs = [U]
    v = U
    for k in range(mlp.depth - 1):
        v = (v @ mlp.weights[k].T) * masks[k]
        vs.append(v)
    gW, gb = [], []
    r2 = (2.0 * r)[:, None]
    for k in range(mlp.depth):
        gW.append(deltas[k].T @ (r2 * acts[k] + vs[k]) / B)
        gb.append((r2 * deltas[k]).sum(axis=0) / B)
    c, g, h = (float(t.mean()) for t in terms)
    return gW, gb, LossBreakdown(c, g, h, c + config.gamma1 * g + config.gamma2 * h)


# -- optimisation --------------------------------------------------------------

class _Optimizer:
    def __init__(self, mlp, config):
        self.config = config
        self.vel = [np.zeros_like(p) for p in self._params(mlp)]
        self.sq = [np.zeros_like(p) for p in self._params(mlp)]
        self.t = 0
        self.lr = config.learning_rate

    @staticmethod
    def _params(mlp):
        return [*mlp.weights, *mlp.biases]

    def step(self, mlp, gW, gb):
        grads = [*gW, *gb]
        params = self._params(mlp)
        self.t += 1
        c = self.config
        for i, (p, g) in enumerate(zip(params, grads)):
            if c.optimizer == "sgd":
                self.vel[i] = c.momentum * self.vel[i] - self.lr * g
                p += self.vel[i]
            else:
                b1, b2 = c.momentum, 0.999
                self.vel[i] = b1 * self.vel[i] + (1 - b1) * g
                self.sq[i] = b2 * self.sq[i] + (1 - b2) * g * g
                mhat = self.vel[i] / (1 - b1 ** self.t)
                vhat = self.sq[i] / (1 - b2 ** self.t)
                p -= self.lr * mhat / (np.sqrt(vhat) + 1e-8)


def _holdout_split(count, fraction, rng):
    order = rng.permutation(count)
    cut = int(round(fraction * count)) if count > 1 else 0
    return order[cut:], order[:cut]


def train(mlp: Mlp, loads, J, mu, active, cost, config: TrainConfig, normalize=True):
    """Minibatch training on the three-term loss.  Returns (mlp, history)."""
    loads = np.asarray(loads, dtype=float)
    J = np.asarray(J, dtype=float)
    mu = np.asarray(mu, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if loads.ndim != 2 or loads.shape[1] != mlp.input_dim:
        raise DimensionMismatch("training loads do not match the model input width")
    if mlp.output_dim != 1:
        raise DimensionMismatch("surrogate must have a scalar output")
    status = nodal_targets(active, loads.shape[1])
    rng = np.random.default_rng(config.seed)
    tr, ho = _holdout_split(len(loads), config.holdout_fraction, rng)
    if normalize:
        mlp.set_normalization(loads[tr], config.normalization)
        mlp.weights[-1] *= config.output_init_scale
        mlp.biases[-1][:] = J[tr].mean()
    opt = _Optimizer(mlp, config)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(tr)
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            gW, gb, lb = loss_gradient(mlp, loads[idx], J[idx], mu[idx], None, cost, config, status=status[idx])
            if not np.isfinite(lb.total):
                raise Diverged(f"loss became non-finite in epoch {epoch}")
            opt.step(mlp, gW, gb)
        if not all(np.all(np.isfinite(w)) for w in mlp.weights):
            raise Diverged(f"parameters became non-finite in epoch {epoch}")
        opt.lr *= config.lr_decay
        entry = {"epoch": epoch, "train": _eval(mlp, loads[tr], J[tr], mu[tr], status[tr], cost, config)}
        if len(ho):
            entry["holdout"] = _eval(mlp, loads[ho], J[ho], mu[ho], status[ho], cost, config)
        if not np.isfinite(entry["train"]["total"]):
            raise Diverged(f"loss became non-finite in epoch {epoch}")
        history.append(entry)
    return mlp, history


def _eval(mlp, loads, J, mu, status, cost, config):
    with np.errstate(over="ignore", invalid="ignore"):
        *_, terms = _batch_terms(mlp, loads, J, mu, status, cost, config)
        c, g, h = (float(t.mean()) for t in terms)
    return LossBreakdown(c, g, h, c + config.gamma1 * g + config.gamma2 * h).as_dict()


# -- weight files --------------------------------------------------------------

def save_weights(mlp: Mlp, path, extra=None):
    header = {
        "version": WEIGHTS_VERSION,
        "widths": mlp.widths,
        "in_mean": mlp.in_mean.tolist(),
        "in_std": mlp.in_std.tolist(),
        "extra": extra or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(mlp.parameters().astype("<f8").tobytes())


def load_weights(path, widths=None, return_extra=False):
    """Read a weight file; ``widths`` (if given) must match the stored architecture."""
    data = Path(path).read_bytes()
    head = len(WEIGHTS_MAGIC)
    if len(data) < head + 4 or data[:head] != WEIGHTS_MAGIC:
        raise ParseError("not a weight file (bad magic)")
    (hlen,) = struct.unpack("<I", data[head:head + 4])
    start = head + 4
    if len(data) < start + hlen:
        raise ParseError("truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("unreadable header") from None
    if header.get("version") != WEIGHTS_VERSION:
        raise SchemaMismatch(f"weight file version {header.get('version')} != {WEIGHTS_VERSION}")
    stored = [int(w) for w in header["widths"]]
    if widths is not None and list(widths) != stored:
        raise SchemaMismatch(f"architecture {stored} does not match requested {list(widths)}")
    mlp = Mlp(stored, in_mean=header["in_mean"], in_std=header["in_std"])
    body = data[start + hlen:]
    if len(body) != 8 * mlp.parameter_count:
        raise ParseError(f"expected {8 * mlp.parameter_count} parameter bytes, found {len(body)}")
    mlp.set_parameters(np.frombuffer(body, dtype="<f8"))
    return (mlp, header.get("extra", {})) if return_extra else mlp


# -- plain supervised fitting (used by the baselines) --------------------------

def fit_supervised(mlp: Mlp, loads, targets, config: TrainConfig, loss_kind="mse"):
    """Minibatch fit of ``mlp`` to ``targets`` with MSE or softmax cross-entropy.

    ``targets`` are real vectors for "mse" and integer class labels for "ce".
    Returns (mlp, history of per-epoch mean training loss).
    """
    loads = np.asarray(loads, dtype=float)
    if loads.ndim != 2 or loads.shape[1] != mlp.input_dim:
        raise DimensionMismatch("training loads do not match the model input width")
    if loss_kind not in ("mse", "ce"):
        raise InvalidParam(f"unknown loss {loss_kind!r}")
    targets = np.asarray(targets)
    rng = np.random.default_rng(config.seed)
    mlp.set_normalization(loads)
    opt = _Optimizer(mlp, config)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(loads))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            out = mlp.predict(loads[idx])
            val, d_out = _supervised_loss(out, targets[idx], loss_kind)
            if not np.isfinite(val):
                raise Diverged(f"loss became non-finite in epoch {epoch}")
            gW, gb = mlp.backward(loads[idx], d_out / len(idx))
            opt.step(mlp, gW, gb)
            total += val * len(idx)
        opt.lr *= config.lr_decay
        history.append(total / max(1, len(loads)))
    return mlp, history


def _supervised_loss(out, target, kind):
    if kind == "mse":
        diff = out - target
        return float((diff ** 2).sum(axis=1).mean()), 2.0 * diff
    z = out - out.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(target))
    val = float(-np.log(np.maximum(p[rows, target], 1e-300)).mean())
    grad = p.copy()
    grad[rows, target] -= 1.0
    return val, grad
