"""Classification models with hand-rolled gradients on flat parameter vectors.

Keeping parameters as one flat float64 vector makes the update h = w' - w a
plain array and lets the codec treat every model identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .rng import stream_unit_block

MODEL_KINDS = ("linear", "mlp")


@dataclass(frozen=True)
class ModelArch:
    """kind plus layer widths; widths for linear are (d, C)."""

    kind: str
    widths: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        need = 2 if self.kind == "linear" else 4
        if len(self.widths) != need:
            raise ValueError(f"{self.kind} model expects {need} widths, got {self.widths}")

    @property
    def n_params(self) -> int:
        total = 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            total += fi * fo + fo
        return total


def init_params(arch: ModelArch, seed: int) -> np.ndarray:
    """Symmetric uniform fan-in initialization, zero biases."""
    parts = []
    pos = 0
    for fi, fo in zip(arch.widths[:-1], arch.widths[1:]):
        bound = 1.0 / np.sqrt(fi)
        u = stream_unit_block(seed, pos, fi * fo)
        pos += fi * fo
        parts.append((2.0 * u - 1.0) * bound)
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def _unpack(arch: ModelArch, params: np.ndarray):
    layers = []
    pos = 0
    for fi, fo in zip(arch.widths[:-1], arch.widths[1:]):
        w = params[pos : pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = params[pos : pos + fo]
        pos += fo
        layers.append((w, b))
    return layers


def logits(arch: ModelArch, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward pass; x is (n, d) or (d,)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    layers = _unpack(arch, params)
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w + b, 0.0)
    w, b = layers[-1]
    return a @ w + b


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    arch: ModelArch, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient (flat vector)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = x.shape[0]
    layers = _unpack(arch, params)
    acts = [x]
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w + b, 0.0)
        acts.append(a)
    w_last, b_last = layers[-1]
    z = a @ w_last + b_last
    p = _softmax(z)
    eps = 1e-300  # log underflow guard only; probabilities stay unnormalized-free
    loss = float(-np.log(p[np.arange(n), y] + eps).mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    dz = p
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = []
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        a_in = acts[li]
        dw = a_in.T @ dz
        db = dz.sum(axis=0)
        grads.append((dw, db))
        if li > 0:
            da = dz @ w.T
            dz = da * (acts[li] > 0)
    flat = []
    for dw, db in reversed(grads):
        flat.append(dw.ravel())
        flat.append(db)
    return loss, np.concatenate(flat)


def predict(arch: ModelArch, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(arch, params, x), axis=1)


def accuracy(arch: ModelArch, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions."""
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(arch, params, x) == np.asarray(y)))


def make_objective(arch: ModelArch, x: np.ndarray, y: np.ndarray):
    """Full-shard objective closure: params -> (loss, grad)."""

    def objective(params: np.ndarray):
        return loss_and_grad(arch, params, x, y)

    return objective
