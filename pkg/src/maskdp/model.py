"""Token-set classifier: shared affine embedding, tanh, mean pooling, affine head.

Gradients are written out by hand. The model can be evaluated on any subset of
a sample's tokens, including the empty one, whose pooled feature is the zero
vector (so its logits are just the head bias).

Flattening order is field order, each block row-major (C order)::

    embed_weights (d_in, d_h) | embed_bias (d_h,) | head_weights (d_h, k) | head_bias (k,)

Checkpoint format (UTF-8 text, ``\\n`` line endings)::

    maskdp-checkpoint v1 d_in=<int> d_h=<int> k_classes=<int>
    <value 0>
    <value 1>
    ...

one float per line in the flattening order, written with Python's shortest
round-trip ``repr`` so reading gives back the identical doubles.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "maskdp-checkpoint v1"
_HEADER_RE = re.compile(r"^maskdp-checkpoint v1 d_in=(\d+) d_h=(\d+) k_classes=(\d+)$")


@dataclass
class ModelParams:
    embed_weights: np.ndarray
    embed_bias: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray

    @property
    def d_in(self) -> int:
        return self.embed_weights.shape[0]

    @property
    def d_h(self) -> int:
        return self.embed_weights.shape[1]

    @property
    def k_classes(self) -> int:
        return self.head_weights.shape[1]

    @property
    def size(self) -> int:
        return param_count(self.d_in, self.d_h, self.k_classes)

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.embed_weights.ravel(),
            self.embed_bias.ravel(),
            self.head_weights.ravel(),
            self.head_bias.ravel(),
        ])

    @classmethod
    def unflatten(cls, flat: np.ndarray, d_in: int, d_h: int, k_classes: int) -> "ModelParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (param_count(d_in, d_h, k_classes),):
            raise ValueError(
                f"expected {param_count(d_in, d_h, k_classes)} values for dims "
                f"({d_in}, {d_h}, {k_classes}), got shape {flat.shape}"
            )
        sizes = [d_in * d_h, d_h, d_h * k_classes, k_classes]
        w, b, v, c = np.split(flat, np.cumsum(sizes)[:-1])
        return cls(w.reshape(d_in, d_h).copy(), b.copy(), v.reshape(d_h, k_classes).copy(), c.copy())

    @classmethod
    def zeros(cls, d_in: int, d_h: int, k_classes: int) -> "ModelParams":
        return cls.unflatten(np.zeros(param_count(d_in, d_h, k_classes)), d_in, d_h, k_classes)

    def copy(self) -> "ModelParams":
        return ModelParams.unflatten(self.flatten(), self.d_in, self.d_h, self.k_classes)


def param_count(d_in: int, d_h: int, k_classes: int) -> int:
    return d_in * d_h + d_h + d_h * k_classes + k_classes


def init_params(d_in: int, d_h: int, k_classes: int, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    a1 = math.sqrt(6.0 / (d_in + d_h))
    a2 = math.sqrt(6.0 / (d_h + k_classes))
    return ModelParams(
        embed_weights=rng.uniform(-a1, a1, size=(d_in, d_h)),
        embed_bias=np.zeros(d_h),
        head_weights=rng.uniform(-a2, a2, size=(d_h, k_classes)),
        head_bias=np.zeros(k_classes),
    )


def _as_tokens(params: ModelParams, tokens) -> np.ndarray:
    x = np.asarray(tokens, dtype=float)
    if x.size == 0:
        return x.reshape(0, params.d_in)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValueError(f"tokens must have shape (n, {params.d_in}), got {x.shape}")
    return x


def _hidden(params, x, linear):
    pre = x @ params.embed_weights + params.embed_bias
    return pre if linear else np.tanh(pre)


def forward(params: ModelParams, tokens, linear: bool = False) -> np.ndarray:
    """Logits for one token subset of shape ``(n, d_in)``."""
    x = _as_tokens(params, tokens)
    if len(x) == 0:
        pooled = np.zeros(params.d_h)
    else:
        pooled = _hidden(params, x, linear).mean(axis=0)
    return pooled @ params.head_weights + params.head_bias


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def loss_and_grad(params: ModelParams, tokens, label: int, linear: bool = False):
    """Softmax cross-entropy at ``label`` and its gradient w.r.t. the flat params."""
    k = params.k_classes
    if not 0 <= label < k:
        raise ValueError(f"label must lie in [0, {k}), got {label}")
    x = _as_tokens(params, tokens)
    n = len(x)

    if n == 0:
        h = None
        pooled = np.zeros(params.d_h)
    else:
        h = _hidden(params, x, linear)
        pooled = h.mean(axis=0)
    logits = pooled @ params.head_weights + params.head_bias
    logp = _log_softmax(logits)
    loss = -float(logp[label])

    dlogits = np.exp(logp)
    dlogits[label] -= 1.0
    d_head_w = np.outer(pooled, dlogits)
    d_head_b = dlogits
    if n == 0:
        d_embed_w = np.zeros_like(params.embed_weights)
        d_embed_b = np.zeros_like(params.embed_bias)
    else:
        d_pooled = params.head_weights @ dlogits
        d_pre = np.broadcast_to(d_pooled / n, h.shape)
        if not linear:
            d_pre = d_pre * (1.0 - h * h)
        d_embed_w = x.T @ d_pre
        d_embed_b = d_pre.sum(axis=0)

    grad = np.concatenate([d_embed_w.ravel(), d_embed_b, d_head_w.ravel(), d_head_b])
    return loss, grad


def predict(params: ModelParams, tokens: np.ndarray, weights: np.ndarray, linear: bool = False) -> np.ndarray:
    """Argmax class for a batch of samples under per-token pooling weights.

    ``tokens`` is ``(n, K, d_in)`` and ``weights`` is ``(n, K)`` with 0/1 entries
    selecting the tokens that take part; rows with no selected token pool to zero.
    """
    h = _hidden(params, tokens, linear)
    counts = weights.sum(axis=1, keepdims=True)
    w = np.divide(weights, counts, out=np.zeros(weights.shape), where=counts > 0)
    pooled = np.einsum("nk,nkh->nh", w, h)
    logits = pooled @ params.head_weights + params.head_bias
    return logits.argmax(axis=1)


def save_checkpoint(params: ModelParams, path) -> None:
    lines = [f"{CHECKPOINT_MAGIC} d_in={params.d_in} d_h={params.d_h} k_classes={params.k_classes}"]
    lines.extend(repr(float(v)) for v in params.flatten())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ValueError(f"{path}: empty checkpoint")
    m = _HEADER_RE.match(text[0])
    if m is None:
        raise ValueError(f"{path}:1: bad checkpoint header {text[0]!r}")
    d_in, d_h, k = (int(g) for g in m.groups())
    try:
        values = [float(s) for s in text[1:]]
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric checkpoint value ({exc})") from None
    return ModelParams.unflatten(np.array(values), d_in, d_h, k)
