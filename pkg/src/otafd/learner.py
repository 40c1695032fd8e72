"""Small softmax classifier with the distillation-regularized loss.

The per-device objective is

    F(theta; r) = 1/B sum_b [ CE(G(u_b), v_b) + gamma ||G(u_b) - r^{v_b}||^2 ]

where G is the softmax output and r^k the broadcast per-class target.
Labels are 1-indexed (1..K) throughout the package.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    num_classes: int
    hidden: int | None = None

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        d, k, h = self.input_dim, self.num_classes, self.hidden
        if h is None:
            return [(d, k), (k,)]
        return [(d, h), (h,), (h, k), (k,)]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray
    arch: Architecture

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != self.arch.dim:
            raise ValueError(f"theta has {theta.size} entries, architecture needs {self.arch.dim}")
        object.__setattr__(self, "theta", theta)

    def unpack(self) -> list[np.ndarray]:
        out, pos = [], 0
        for shape in self.arch.shapes:
            n = int(np.prod(shape))
            out.append(self.theta[pos : pos + n].reshape(shape))
            pos += n
        return out


def init_params(arch: Architecture, rng: np.random.Generator, scale: float = 0.01) -> ModelParams:
    return ModelParams(scale * rng.standard_normal(arch.dim), arch)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_inputs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, model expects {params.arch.input_dim}")
    return x


def _logits(params: ModelParams, x: np.ndarray):
    if params.arch.hidden is None:
        w, b = params.unpack()
        return x @ w + b, None
    w1, b1, w2, b2 = params.unpack()
    a = np.tanh(x @ w1 + b1)
    return a @ w2 + b2, a


def forward(params: ModelParams, x) -> np.ndarray:
    """Softmax outputs; a single feature vector gives a single K-vector."""
    single = np.ndim(x) == 1
    x = _check_inputs(params, x)
    p = softmax(_logits(params, x)[0])
    return p[0] if single else p


def _dataset_arrays(params: ModelParams, features, labels, distilled):
    x = _check_inputs(params, features)
    v = np.asarray(labels).reshape(-1) - 1
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    if x.shape[0] != v.size:
        raise ValueError("features and labels have different lengths")
    k = params.arch.num_classes
    r = np.asarray(distilled, dtype=float)
    if r.shape != (k, k):
        raise ValueError(f"distilled targets must be ({k}, {k}), got {r.shape}")
    return x, v, r


def loss(params: ModelParams, features, labels, distilled, gamma: float) -> float:
    x, v, r = _dataset_arrays(params, features, labels, distilled)
    z, _ = _logits(params, x)
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = -log_p[np.arange(v.size), v]
    dist = np.sum((np.exp(log_p) - r[v]) ** 2, axis=1)
    return float(np.mean(ce + gamma * dist))


def gradient(params: ModelParams, features, labels, distilled, gamma: float) -> np.ndarray:
    """Analytic gradient of `loss` with respect to the flat parameter vector."""
    x, v, r = _dataset_arrays(params, features, labels, distilled)
    n, k = v.size, params.arch.num_classes
    z, hidden = _logits(params, x)
    p = softmax(z)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), v] = 1.0
    # softmax Jacobian applied to the distillation residual: J^T g = p*g - p (p.g)
    g = 2.0 * gamma * (p - r[v])
    dz = (p - onehot) + p * g - p * np.sum(p * g, axis=1, keepdims=True)
    dz /= n
    if params.arch.hidden is None:
        parts = [x.T @ dz, dz.sum(axis=0)]
    else:
        _, _, w2, _ = params.unpack()
        da = (dz @ w2.T) * (1.0 - hidden**2)
        parts = [x.T @ da, da.sum(axis=0), hidden.T @ dz, dz.sum(axis=0)]
    return np.concatenate([q.reshape(-1) for q in parts])


def learning_rate(t, eta0: float):
    """eta0 / sqrt(t) for 1-indexed rounds."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1):
        raise ValueError("rounds are 1-indexed; t must be >= 1")
    out = eta0 / np.sqrt(t_arr)
    return float(out) if np.ndim(out) == 0 else out


def sgd_step(params: ModelParams, grad, t: int, eta0: float) -> ModelParams:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.theta.shape:
        raise ValueError("gradient dimension does not match parameters")
    return ModelParams(params.theta - learning_rate(t, eta0) * grad, params.arch)


def predict(params: ModelParams, features) -> np.ndarray:
    """1-indexed argmax labels; ties go to the lowest class index."""
    return np.argmax(forward(params, np.atleast_2d(features)), axis=1) + 1


def evaluate(params: ModelParams, features, labels) -> float:
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("test set is empty")
    return float(np.mean(predict(params, features) == labels))


# Checkpoint layout: uint32 LE header length, UTF-8 JSON header, float64 LE vector.

def save_params(params: ModelParams, path, seed: int | None = None) -> None:
    header = {
        "input_dim": params.arch.input_dim,
        "num_classes": params.arch.num_classes,
        "hidden": params.arch.hidden,
        "dim": params.arch.dim,
        "seed": seed,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.theta.astype("<f8").tobytes())


def load_params(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError("checkpoint is truncated")
    (n,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4 : 4 + n].decode())
    theta = np.frombuffer(raw, dtype="<f8", offset=4 + n).astype(float)
    if theta.size != header["dim"]:
        raise ValueError(f"checkpoint holds {theta.size} values, header says {header['dim']}")
    arch = Architecture(header["input_dim"], header["num_classes"], header["hidden"])
    return ModelParams(theta, arch), header
