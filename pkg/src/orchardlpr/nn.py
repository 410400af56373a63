"""Minimal differentiable building blocks: linear layers, ReLU, and AdamW.

Everything is float64 and functional: each forward returns (output, cache)
and the matching backward consumes the cache, returns input gradients, and
accumulates parameter gradients in place. There is no graph engine; callers
compose forwards and unwind backwards explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError

CHECKPOINT_MAGIC = b"ORNN"
CHECKPOINT_VERSION = 1


@dataclass
class ParamTensor:
    """A named trainable array paired with its gradient accumulator."""

    name: str
    values: np.ndarray
    grads: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grads is None:
            self.grads = np.zeros_like(self.values)
        else:
            self.grads = np.asarray(self.grads, dtype=np.float64)
        if self.grads.shape != self.values.shape:
            raise ValueError(
                f"{self.name}: grads shape {self.grads.shape} != values shape "
                f"{self.values.shape}"
            )

    def zero_grad(self) -> None:
        self.grads[...] = 0.0


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """He-uniform init: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    fan_in = shape[1] if len(shape) > 1 else shape[0]
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def linear_forward(x: np.ndarray, w: ParamTensor, b: ParamTensor):
    """out[o, s] = sum_i w[o, i] * x[i, s] + b[o].

    x is (c_in, s); w is (c_out, c_in); b is (c_out,).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or w.values.ndim != 2 or w.values.shape[1] != x.shape[0]:
        raise ValueError(
            f"linear shape mismatch: x {x.shape}, w {w.values.shape}"
        )
    if b.values.shape != (w.values.shape[0],):
        raise ValueError(f"bias shape {b.values.shape} != ({w.values.shape[0]},)")
    out = w.values @ x + b.values[:, None]
    return out, (x, w, b)


def linear_backward(upstream: np.ndarray, cache):
    """Analytic gradients of linear_forward; accumulates into w.grads, b.grads."""
    x, w, b = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (w.values.shape[0], x.shape[1]):
        raise ValueError(
            f"upstream shape {upstream.shape} != {(w.values.shape[0], x.shape[1])}"
        )
    grad_x = w.values.T @ upstream
    grad_w = upstream @ x.T
    grad_b = upstream.sum(axis=1)
    w.grads += grad_w
    b.grads += grad_b
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray):
    """Elementwise max(0, x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), x


def relu_backward(upstream: np.ndarray, cache):
    """Masked upstream; the subgradient at exactly 0 is 0."""
    x = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ValueError(f"upstream shape {upstream.shape} != input shape {x.shape}")
    return np.where(x > 0.0, upstream, 0.0)


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam with bias correction."""

    lr: float = 1e-4
    wd: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: Sequence[ParamTensor], state: AdamWState) -> None:
    """One update over all params; gradients are consumed and zeroed.

    Weight decay multiplies each parameter by (1 - lr*wd) before the Adam
    term, so zero-gradient parameters still decay.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        if not np.all(np.isfinite(p.grads)):
            raise NumericError(f"non-finite gradient in parameter '{p.name}'")
        m = state.m.setdefault(p.name, np.zeros_like(p.values))
        v = state.v.setdefault(p.name, np.zeros_like(p.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grads
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grads**2
        p.values *= 1.0 - state.lr * state.wd
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()


def save_checkpoint(path: str | Path, params: Sequence[ParamTensor]) -> None:
    """Binary checkpoint: magic ORNN, u32 version, then per-parameter records
    (u32 name length, name bytes, u32 rank, u32*rank dims, f64 values). LE."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            dims = p.values.shape
            fh.write(struct.pack("<I", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read an ORNN checkpoint into a name -> array mapping."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    while off < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except (struct.error, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: truncated or corrupt record: {exc}") from exc
        out[name] = values.reshape(dims).astype(np.float64)
    return out


def load_into(params: Sequence[ParamTensor], path: str | Path) -> None:
    """Fill params by name from a checkpoint; shapes must match exactly."""
    loaded = load_checkpoint(path)
    for p in params:
        if p.name not in loaded:
            raise DataError(f"checkpoint missing parameter '{p.name}'")
        got = loaded[p.name]
        if got.shape != p.values.shape:
            raise DataError(
                f"parameter '{p.name}' shape mismatch: checkpoint {got.shape}, "
                f"model {p.values.shape}"
            )
        p.values[...] = got
        p.zero_grad()
