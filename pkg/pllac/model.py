"""
Softmax classifiers with hand-written gradients
===============================================
A linear model and a one-hidden-layer ReLU MLP, both ending in a softmax
over k+1 classes, plus Adam with decoupled weight decay and a versioned
JSON checkpoint format.

Parameter names:
  linear : W (d x C), b (C)
  mlp    : W1 (d x h), b1 (h), W2 (h x C), b2 (C)
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from pllac.errors import DataError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ClassifierParams:
    arch: str
    tensors: dict

    def __post_init__(self):
        if self.arch == "linear":
            expected = ("W", "b")
        elif self.arch == "mlp":
            expected = ("W1", "b1", "W2", "b2")
        else:
            raise DataError(f"unknown architecture {self.arch!r}")
        if tuple(self.tensors) != expected:
            raise ShapeError(f"{self.arch} parameters must be {expected}, got {tuple(self.tensors)}")

        if self.arch == "linear":
            W, b = self.tensors["W"], self.tensors["b"]
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"inconsistent linear shapes W{W.shape} b{b.shape}")
        else:
            W1, b1, W2, b2 = (self.tensors[name] for name in expected)
            if W1.ndim != 2 or b1.shape != (W1.shape[1],) or W2.shape[0] != W1.shape[1] or b2.shape != (W2.shape[1],):
                raise ShapeError(f"inconsistent mlp shapes W1{W1.shape} b1{b1.shape} W2{W2.shape} b2{b2.shape}")

        for name, value in self.tensors.items():
            if not np.all(np.isfinite(value)):
                raise NumericalError(f"non-finite entries in parameter {name}", name=name)

    @property
    def d(self):
        return self.tensors["W" if self.arch == "linear" else "W1"].shape[0]

    @property
    def n_out(self):
        return self.tensors["b" if self.arch == "linear" else "b2"].shape[0]

    @property
    def hidden(self):
        return self.tensors["b1"].shape[0] if self.arch == "mlp" else None

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self):
        return ClassifierParams(self.arch, {name: value.copy() for name, value in self.tensors.items()})


@dataclass
class OptimizerState:
    m: dict
    v: dict
    lr: float
    weight_decay: float = 0.0
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(arch, d, n_out, rng, hidden=500, dtype=np.float64):
    """Glorot-uniform weights, zero biases."""
    dtype = np.dtype(dtype)
    if arch == "linear":
        tensors = {
            "W": _glorot(rng, d, n_out, dtype),
            "b": np.zeros(n_out, dtype=dtype),
        }
    elif arch == "mlp":
        tensors = {
            "W1": _glorot(rng, d, hidden, dtype),
            "b1": np.zeros(hidden, dtype=dtype),
            "W2": _glorot(rng, hidden, n_out, dtype),
            "b2": np.zeros(n_out, dtype=dtype),
        }
    else:
        raise DataError(f"unknown architecture {arch!r}")
    return ClassifierParams(arch, tensors)


def zeros_like(params):
    return {name: np.zeros_like(value) for name, value in params.tensors.items()}


# ──────────────────────────────────────────────
# Forward / backward
# ──────────────────────────────────────────────
def _check_batch(params, batch):
    batch = np.asarray(batch, dtype=params.dtype)
    if batch.ndim != 2 or batch.shape[1] != params.d:
        raise ShapeError(f"batch must be n x {params.d}, got {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise NumericalError("non-finite input features")
    return batch


def _logits(params, batch):
    t = params.tensors
    if params.arch == "linear":
        return batch @ t["W"] + t["b"], None
    pre = batch @ t["W1"] + t["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ t["W2"] + t["b2"], (pre, hidden)


def forward(params, batch):
    """Row-stochastic probability matrix, n x (k+1)."""
    batch = _check_batch(params, batch)
    logits, _ = _logits(params, batch)
    return softmax(logits, axis=1)


predict_proba = forward


def backward(params, batch, upstream):
    """
    Gradient of sum_i <upstream_i, f(x_i)> with respect to every parameter,
    where upstream holds dLoss/dprobs per instance and class.
    """
    batch = _check_batch(params, batch)
    logits, cache = _logits(params, batch)
    probs = softmax(logits, axis=1)
    upstream = np.asarray(upstream, dtype=params.dtype)
    if upstream.shape != probs.shape:
        raise ShapeError(f"upstream gradient must be {probs.shape}, got {upstream.shape}")

    # softmax Jacobian-vector product
    d_logits = probs * (upstream - np.sum(upstream * probs, axis=1, keepdims=True))

    if params.arch == "linear":
        return {"W": batch.T @ d_logits, "b": d_logits.sum(axis=0)}

    pre, hidden = cache
    W2 = params.tensors["W2"]
    d_hidden = (d_logits @ W2.T) * (pre > 0)
    return {
        "W1": batch.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_logits,
        "b2": d_logits.sum(axis=0),
    }


def add_grads(first, second):
    return {name: first[name] + second[name] for name in first}


# ──────────────────────────────────────────────
# Adam
# ──────────────────────────────────────────────
def init_adam(params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState(m=zeros_like(params), v=zeros_like(params), lr=lr,
                          weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state):
    """
    One bias-corrected Adam step followed by decoupled weight decay.
    Returns new (params, state); the inputs are left untouched.
    """
    for name, g in grads.items():
        if name not in params.tensors or g.shape != params.tensors[name].shape:
            raise ShapeError(f"gradient {name} does not match the parameter shapes")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}", name=name)

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_tensors, new_m, new_v = {}, {}, {}
    for name, value in params.tensors.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        updated = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated = updated - state.lr * state.weight_decay * updated
        new_tensors[name] = updated.astype(value.dtype, copy=False)
        new_m[name], new_v[name] = m, v

    new_state = OptimizerState(m=new_m, v=new_v, lr=state.lr, weight_decay=state.weight_decay,
                               step=step, beta1=b1, beta2=b2, eps=state.eps)
    return ClassifierParams(params.arch, new_tensors), new_state


# ──────────────────────────────────────────────
# Checkpoints
# ──────────────────────────────────────────────
def save_checkpoint(params, path, metadata=None):
    """Versioned JSON: shape headers plus row-major weights, optionally with free-form metadata."""
    record = {
        "format_version": CHECKPOINT_VERSION,
        "arch": params.arch,
        "dtype": str(params.dtype),
        "metadata": metadata or {},
        "tensors": {
            name: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in params.tensors.items()
        },
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f)
    logger.info(f"Checkpoint saved: {path}")
    return path


def _read_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        record = json.load(f)
    version = record.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version!r} in {path}")
    return record


def checkpoint_metadata(path):
    return _read_checkpoint(path).get("metadata", {})


def load_checkpoint(path):
    record = _read_checkpoint(path)
    dtype = np.dtype(record.get("dtype", "float64"))
    tensors = {
        name: np.asarray(entry["data"], dtype=dtype).reshape(entry["shape"])
        for name, entry in record["tensors"].items()
    }
    return ClassifierParams(record["arch"], tensors)
