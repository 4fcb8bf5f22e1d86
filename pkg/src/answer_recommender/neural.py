"""Dense numpy layers with hand-written backward passes.

Every layer comes as a ``*_forward`` returning ``(out, cache)`` and a
``*_backward`` consuming the upstream gradient and that cache. Models keep
their weights in a flat ``dict[str, np.ndarray]`` so that :func:`sgd_step`,
:func:`grad_check` and the checkpoint format can treat all of them alike.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .util import atomic_write_bytes

__all__ = [
    "LstmCellParams",
    "NonFiniteError",
    "Params",
    "affine_backward",
    "affine_forward",
    "check_finite",
    "clip_grad_norm",
    "conv1d_valid",
    "conv_bank_backward",
    "conv_bank_forward",
    "cross_entropy",
    "grad_check",
    "init_uniform",
    "load_checkpoint",
    "lstm_cell",
    "lstm_cell_backward",
    "lstm_cell_forward",
    "lstm_sequence_backward",
    "lstm_sequence_forward",
    "max_pool",
    "max_pool_backward",
    "max_pool_forward",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "zeros_like_params",
]

Params = dict[str, np.ndarray]

CHECKPOINT_MAGIC = b"DANN\x00\x00\x00\x01"
INIT_SCALE = 0.08


class NonFiniteError(FloatingPointError):
    """A forward pass or gradient check produced NaN or Inf."""


def check_finite(array: np.ndarray | float, name: str, op: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"Non-finite values in {name!r} after {op}")


def init_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], scale: float = INIT_SCALE
) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(np.float32)


def zeros_like_params(params: Mapping[str, np.ndarray]) -> Params:
    return {name: np.zeros_like(value) for name, value in params.items()}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --------------------------------------------------------------------------- LSTM


@dataclass(frozen=True)
class LstmCellParams:
    """Weights of one LSTM cell, gates stacked in the order input, forget, output, candidate.

    Attributes
    ----------
    w_x:
        ``(4h, n_in)`` input weights.
    w_h:
        ``(4h, h)`` recurrent weights.
    b:
        ``(4h,)`` bias.
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4 = self.b.shape[0]
        if h4 % 4 or self.w_x.shape[0] != h4 or self.w_h.shape != (h4, h4 // 4):
            raise ValueError(
                f"Inconsistent LSTM shapes: w_x {self.w_x.shape}, w_h {self.w_h.shape}, b {self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    @classmethod
    def init(
        cls, input_size: int, hidden_size: int, rng: np.random.Generator, forget_bias: float = 1.0
    ) -> LstmCellParams:
        b = init_uniform(rng, (4 * hidden_size,))
        b[hidden_size : 2 * hidden_size] = forget_bias
        return cls(
            w_x=init_uniform(rng, (4 * hidden_size, input_size)),
            w_h=init_uniform(rng, (4 * hidden_size, hidden_size)),
            b=b,
        )

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray], prefix: str) -> LstmCellParams:
        return cls(params[f"{prefix}_wx"], params[f"{prefix}_wh"], params[f"{prefix}_b"])

    def to_params(self, prefix: str) -> Params:
        return {f"{prefix}_wx": self.w_x, f"{prefix}_wh": self.w_h, f"{prefix}_b": self.b}


def lstm_cell_forward(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmCellParams
) -> tuple[np.ndarray, np.ndarray, tuple]:
    if x.shape != (params.input_size,) or h_prev.shape != (params.hidden_size,) or c_prev.shape != h_prev.shape:
        raise ValueError(
            f"LSTM input {x.shape}/{h_prev.shape}/{c_prev.shape} does not match "
            f"input size {params.input_size} and hidden size {params.hidden_size}"
        )
    h = params.hidden_size
    z = params.w_x @ x + params.w_h @ h_prev + params.b
    i = _sigmoid(z[:h])
    f = _sigmoid(z[h : 2 * h])
    o = _sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h_new = o * tanh_c
    return h_new, c, (x, h_prev, c_prev, i, f, o, g, tanh_c, params)


def lstm_cell_backward(
    dh: np.ndarray, dc: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray, LstmCellParams]:
    """Return ``(dx, dh_prev, dc_prev, grads)`` with ``grads`` shaped like the cell params."""
    x, h_prev, c_prev, i, f, o, g, tanh_c, params = cache
    dc_total = dc + dh * o * (1.0 - tanh_c**2)
    dz = np.concatenate(
        [
            dc_total * g * i * (1.0 - i),
            dc_total * c_prev * f * (1.0 - f),
            dh * tanh_c * o * (1.0 - o),
            dc_total * i * (1.0 - g**2),
        ]
    )
    grads = LstmCellParams(np.outer(dz, x), np.outer(dz, h_prev), dz)
    return params.w_x.T @ dz, params.w_h.T @ dz, dc_total * f, grads


def lstm_cell(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmCellParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step: ``c = f*c_prev + i*g`` and ``h = o*tanh(c)``."""
    h, c, _ = lstm_cell_forward(x, h_prev, c_prev, params)
    return h, c


def lstm_sequence_forward(
    xs: np.ndarray, params: LstmCellParams, h0: np.ndarray | None = None
) -> tuple[np.ndarray, list[tuple]]:
    """Run a cell over ``xs`` of shape ``(T, n_in)``; the initial cell state is zero."""
    h = np.zeros(params.hidden_size, dtype=params.b.dtype) if h0 is None else h0
    c = np.zeros(params.hidden_size, dtype=params.b.dtype)
    hs, caches = [], []
    for x in xs:
        h, c, cache = lstm_cell_forward(x, h, c, params)
        hs.append(h)
        caches.append(cache)
    return np.stack(hs), caches


def lstm_sequence_backward(
    dhs: np.ndarray, caches: list[tuple]
) -> tuple[np.ndarray, np.ndarray, LstmCellParams]:
    """Return ``(dxs, dh0, grads)`` given the gradient w.r.t. every output state."""
    params = caches[0][-1]
    dw_x, dw_h, db = np.zeros_like(params.w_x), np.zeros_like(params.w_h), np.zeros_like(params.b)
    dxs = np.zeros((len(caches), params.input_size), dtype=dhs.dtype)
    dh_next = np.zeros(params.hidden_size, dtype=dhs.dtype)
    dc_next = np.zeros(params.hidden_size, dtype=dhs.dtype)
    for t in reversed(range(len(caches))):
        dx, dh_next, dc_next, grads = lstm_cell_backward(dhs[t] + dh_next, dc_next, caches[t])
        dxs[t] = dx
        dw_x += grads.w_x
        dw_h += grads.w_h
        db += grads.b
    return dxs, dh_next, LstmCellParams(dw_x, dw_h, db)


# --------------------------------------------------------------------------- convolution


def conv1d_valid(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``c_i = sum(S[:, i:i+m] * F)`` for every valid offset ``i``."""
    if s.ndim != 2 or f.ndim != 2 or s.shape[0] != f.shape[0]:
        raise ValueError(f"Sentence matrix {s.shape} and filter {f.shape} must share the row dimension")
    if s.shape[1] < f.shape[1]:
        raise ValueError(f"Sequence length {s.shape[1]} is shorter than filter width {f.shape[1]}")
    windows = sliding_window_view(s, f.shape[1], axis=1)
    return np.einsum("dlm,dm->l", windows, f)


def conv_bank_forward(
    x: np.ndarray, filters: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Batched valid convolution.

    ``x`` is ``(B, d, L)``, ``filters`` is ``(n, d, m)``; the output is ``(B, n, L-m+1)``.
    """
    width = filters.shape[2]
    if x.shape[2] < width:
        raise ValueError(f"Sequence length {x.shape[2]} is shorter than filter width {width}")
    windows = sliding_window_view(x, width, axis=2)
    out = np.einsum("bdlm,ndm->bnl", windows, filters, optimize=True) + bias[None, :, None]
    return out, (windows, filters, x.shape)


def conv_bank_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dx, dfilters, dbias)``."""
    windows, filters, x_shape = cache
    dfilters = np.einsum("bnl,bdlm->ndm", dout, windows, optimize=True)
    dbias = dout.sum(axis=(0, 2))
    dx = np.zeros(x_shape, dtype=dout.dtype)
    span = dout.shape[2]
    for j in range(filters.shape[2]):
        dx[:, :, j : j + span] += np.einsum("bnl,nd->bdl", dout, filters[:, :, j], optimize=True)
    return dx, dfilters, dbias


# --------------------------------------------------------------------------- pooling and activations


def max_pool(c: np.ndarray) -> float:
    if c.size == 0:
        raise ValueError("max_pool of an empty vector")
    return float(np.max(c))


def max_pool_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Max over the last axis."""
    if x.shape[-1] == 0:
        raise ValueError("max_pool of an empty vector")
    idx = np.argmax(x, axis=-1)
    return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0], (idx, x.shape)


def max_pool_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    idx, shape = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, idx[..., None], dout[..., None], axis=-1)
    return dx


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    """``x @ w.T + b`` with ``w`` of shape ``(out, in)``."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"Affine input width {x.shape[-1]} does not match weights {w.shape}")
    return x @ w.T + b, (x, w)


def affine_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    x2, d2 = x.reshape(-1, x.shape[-1]), dout.reshape(-1, dout.shape[-1])
    return dout @ w, d2.T @ x2, d2.sum(axis=0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of integer ``labels`` under row distributions ``probs``."""
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Return ``(mean loss, probs, dlogits)`` for a batch of logits ``(B, C)``."""
    probs = softmax(logits)
    loss = cross_entropy(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    return loss, probs, dlogits / len(labels)


# --------------------------------------------------------------------------- optimisation


def sgd_step(params: Params, grads: Mapping[str, np.ndarray], lr: float) -> Params:
    """In-place ``p -= lr * g`` for every parameter that has a gradient."""
    for name, grad in grads.items():
        if name not in params:
            raise ValueError(f"Gradient for unknown parameter {name!r}")
        if grad.shape != params[name].shape:
            raise ValueError(f"Gradient shape {grad.shape} does not match parameter {name!r} {params[name].shape}")
    for name, grad in grads.items():
        params[name] -= (lr * grad).astype(params[name].dtype, copy=False)
    return params


def clip_grad_norm(grads: Params, max_norm: float) -> float:
    """Rescale ``grads`` in place to a global L2 norm of at most ``max_norm``; return the original norm."""
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def grad_check(
    loss_and_grads: Callable[[Params, Any], tuple[float, Params]],
    params: Mapping[str, np.ndarray],
    inputs: Any,
    eps: float = 1e-5,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The check runs on float64 copies of ``params``. Parameters without a
    gradient entry are treated as frozen and skipped. ``samples`` limits the
    number of entries checked per tensor.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    work = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    loss, analytic = loss_and_grads(work, inputs)
    check_finite(loss, "loss", "grad_check")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(analytic):
        tensor = work[name].reshape(-1)
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        positions = np.arange(tensor.size)
        if samples is not None and samples < tensor.size:
            positions = rng.choice(tensor.size, size=samples, replace=False)
        for pos in positions:
            original = tensor[pos]
            tensor[pos] = original + eps
            plus = loss_and_grads(work, inputs)[0]
            tensor[pos] = original - eps
            minus = loss_and_grads(work, inputs)[0]
            tensor[pos] = original
            check_finite(np.array([plus, minus]), name, "grad_check")
            numeric = (plus - minus) / (2 * eps)
            a = grad[pos]
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)
    return worst


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(
    path: Path | str, model: str, hyperparams: Mapping[str, Any], params: Mapping[str, np.ndarray]
) -> Path:
    """Write ``DANN`` magic, header length, JSON header, then float32 little-endian tensors."""
    tensors, payloads, offset = [], [], 0
    for name in sorted(params):
        data = np.ascontiguousarray(params[name], dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(params[name].shape), "offset": offset, "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = json.dumps(
        {"model": model, "hyperparams": dict(hyperparams), "tensors": tensors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payloads)
    return atomic_write_bytes(path, blob)


def load_checkpoint(path: Path | str, model: str | None = None) -> tuple[dict[str, Any], Params]:
    """Return ``(hyperparams, params)``; ``model`` guards against loading the wrong checkpoint."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + header_len])
    if model is not None and header["model"] != model:
        raise ValueError(f"{path} holds a {header['model']!r} checkpoint, expected {model!r}")
    base = 16 + header_len
    params = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        array = np.frombuffer(data, dtype="<f4", count=count, offset=base + entry["offset"])
        params[entry["name"]] = array.reshape(entry["shape"]).astype(np.float32)
    return header["hyperparams"], params
