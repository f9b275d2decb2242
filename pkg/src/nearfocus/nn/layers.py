"""Layers of the position-detector network, with exact reverse-mode backward.

Everything runs in float64 on numpy; each layer caches what its backward
needs during the training-mode forward. No autograd: the model wires the
chain by hand, which keeps gradients inspectable and finite-difference
checkable layer by layer.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

MASK_FILL = -1e9  # additive stand-in for -inf in masked softmax


def xavier_uniform(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    fan_in: int,
    fan_out: int,
    dtype=np.float64,
) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base: trainable ``params``, matching ``grads``, persistent ``buffers``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward")


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def build_masks(valid_rows: np.ndarray, causal: bool) -> np.ndarray:
    """Combine a padding mask and an optional causal mask into one n x n grid.

    ``valid_rows[j] == False`` zeroes column j for every query (padding
    positions contribute nothing); ``causal`` zeroes j > i. Entries are 1.0
    where attention is allowed.
    """
    valid_rows = np.asarray(valid_rows, dtype=bool)
    n = valid_rows.shape[-1]
    mask = np.broadcast_to(valid_rows[..., None, :], valid_rows.shape[:-1] + (n, n)).astype(np.float64)
    if causal:
        mask = mask * np.tril(np.ones((n, n)))
    return np.ascontiguousarray(mask)


def attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Scaled dot-product attention softmax(Q K^T / sqrt(d_k) + mask) V.

    Blocked positions receive an additive -1e9 before the softmax; a query
    row with every position blocked is a contract violation.
    """
    d_k = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d_k)
    if mask is not None:
        if not np.all(mask.sum(axis=-1) > 0):
            raise ValueError("attention row with all positions blocked")
        scores = scores + (mask - 1.0) * (-MASK_FILL)
    weights = softmax_rows(scores)
    return weights @ v


class Dense(Layer):
    """Affine map over the last axis: y = x @ W + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float64):
        super().__init__()
        self.params["w"] = xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype)
        if bias:
            self.params["b"] = np.zeros(d_out, dtype=dtype)
        self.has_bias = bias

    def forward(self, x, train):
        self._cache = x
        y = x @ self.params["w"]
        if self.has_bias:
            y = y + self.params["b"]
        return y

    def backward(self, dout):
        self._need_cache()
        x = self._cache
        flat_x = x.reshape(-1, x.shape[-1])
        flat_d = dout.reshape(-1, dout.shape[-1])
        self.grads["w"] = flat_x.T @ flat_d
        if self.has_bias:
            self.grads["b"] = flat_d.sum(axis=0)
        return dout @ self.params["w"].T


class ReLU(Layer):
    def forward(self, x, train):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dout):
        self._need_cache()
        return np.where(self._cache, dout, 0.0)


class Sigmoid(Layer):
    def forward(self, x, train):
        out = 1.0 / (1.0 + np.exp(-x))
        self._cache = out
        return out

    def backward(self, dout):
        self._need_cache()
        out = self._cache
        return dout * out * (1.0 - out)


class Conv1x3(Layer):
    """1x3 convolution along the width (distance) axis, padding 1.

    Input (B, C_in, H, W) -> output (B, C_out, H, W). Kernel height is 1, so
    rows never mix; the three taps are applied as shifted channel mixes.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.params["w"] = xavier_uniform(rng, (c_out, c_in, 3), c_in * 3, c_out * 3, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.c_in = c_in
        self.c_out = c_out

    def forward(self, x, train):
        if x.shape[-1] < 1 or x.shape[-2] < 1:
            raise ValueError("conv input must have positive spatial extent")
        xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1)))
        self._cache = xp
        w = self.params["w"]
        width = x.shape[-1]
        out = np.zeros(x.shape[:1] + (self.c_out,) + x.shape[2:], dtype=x.dtype)
        for t in range(3):
            out += np.einsum("bchw,oc->bohw", xp[:, :, :, t : t + width], w[:, :, t], optimize=True)
        return out + self.params["b"][None, :, None, None]

    def backward(self, dout):
        self._need_cache()
        xp = self._cache
        w = self.params["w"]
        width = dout.shape[-1]
        dw = np.zeros_like(w)
        dxp = np.zeros_like(xp)
        for t in range(3):
            dw[:, :, t] = np.einsum("bchw,bohw->oc", xp[:, :, :, t : t + width], dout, optimize=True)
            dxp[:, :, :, t : t + width] += np.einsum(
                "bohw,oc->bchw", dout, w[:, :, t], optimize=True
            )
        self.grads["w"] = dw
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        return dxp[:, :, :, 1:-1]


class Conv1x1(Layer):
    """Pointwise channel projection (B, C_in, H, W) -> (B, C_out, H, W)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.params["w"] = xavier_uniform(rng, (c_out, c_in), c_in, c_out, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x, train):
        self._cache = x
        return (
            np.einsum("bchw,oc->bohw", x, self.params["w"], optimize=True)
            + self.params["b"][None, :, None, None]
        )

    def backward(self, dout):
        self._need_cache()
        x = self._cache
        self.grads["w"] = np.einsum("bchw,bohw->oc", x, dout, optimize=True)
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        return np.einsum("bohw,oc->bchw", dout, self.params["w"], optimize=True)


class BatchNorm(Layer):
    """Per-channel batch normalization over (B, H, W).

    Training mode normalizes with batch statistics (biased variance) and
    tracks running stats with unbiased variance at momentum 0.1; eval mode
    uses the running stats.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x, train):
        if train:
            axes = (0, 2, 3)
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
            self._cache = (xhat, inv, n)
            unbiased = var * n / max(n - 1, 1)
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mean
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * unbiased
        else:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"][None, :, None, None]) * inv[None, :, None, None]
            self._cache = None
        return self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][None, :, None, None]

    def backward(self, dout):
        self._need_cache()
        xhat, inv, n = self._cache
        axes = (0, 2, 3)
        dxh = dout * xhat
        self.grads["gamma"] = dxh.sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        gamma = self.params["gamma"]
        # dx = gamma*inv/n * (n*dout - sum(dout) - xhat*sum(dout*xhat))
        sum_d = dout.sum(axis=axes)
        sum_dx = self.grads["gamma"]
        out = dout * n
        out -= sum_d[None, :, None, None]
        xhat *= sum_dx[None, :, None, None]
        out -= xhat
        out *= (gamma * inv / n)[None, :, None, None]
        self._cache = None  # xhat was consumed in place
        return out


class MaxPool2x2(Layer):
    """2x2 stride-2 max pooling with ceil semantics (25 -> 13).

    Odd extents are padded with -inf so partial windows pool over real
    values only; gradients route to the per-window argmax (first maximum on
    ties).
    """

    def forward(self, x, train):
        b, c, h, w = x.shape
        h2, w2 = (h + 1) // 2, (w + 1) // 2
        xp = np.full((b, c, h2 * 2, w2 * 2), -np.inf, dtype=x.dtype)
        xp[:, :, :h, :w] = x
        windows = (
            xp.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
        )
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, (b, c, h, w))
        return out

    def backward(self, dout):
        self._need_cache()
        idx, (b, c, h, w) = self._cache
        h2, w2 = dout.shape[2], dout.shape[3]
        dwin = np.zeros((b, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dxp = dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2 * 2, w2 * 2)
        return dxp[:, :, :h, :w]


class LayerNorm(Layer):
    """Normalization over the last axis with learnable scale and shift."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.params["gamma"] = np.ones(dim, dtype=dtype)
        self.params["beta"] = np.zeros(dim, dtype=dtype)
        self.eps = eps

    def forward(self, x, train):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        self._need_cache()
        xhat, inv = self._cache
        d = xhat.shape[-1]
        lead = tuple(range(dout.ndim - 1))
        self.grads["gamma"] = (dout * xhat).sum(axis=lead)
        self.grads["beta"] = dout.sum(axis=lead)
        dxhat = dout * self.params["gamma"]
        sum_d = dxhat.sum(axis=-1, keepdims=True)
        sum_dx = (dxhat * xhat).sum(axis=-1, keepdims=True)
        return (inv / d) * (d * dxhat - sum_d - xhat * sum_dx)


class MultiHeadSelfAttention(Layer):
    """Self-attention with h parallel heads and an output projection.

    Input (B, n, d_model); optional mask (B, n, n) with 1 = attend. Per-head
    dims are d_model / h; blocked scores get additive -1e9 pre-softmax.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("head count must divide d_model")
        self.d_model = d_model
        self.h = n_heads
        self.dh = d_model // n_heads
        for name in ("wq", "wk", "wv", "wo"):
            self.params[name] = xavier_uniform(rng, (d_model, d_model), d_model, d_model, dtype)

    def _split(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.h, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, n, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def forward(self, x, train, mask: Optional[np.ndarray] = None):
        q = self._split(x @ self.params["wq"])
        k = self._split(x @ self.params["wk"])
        v = self._split(x @ self.params["wv"])
        scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(self.dh)
        if mask is not None:
            if not np.all(mask.sum(axis=-1) > 0):
                raise ValueError("attention row with all positions blocked")
            scores = scores + ((mask[:, None, :, :] - 1.0) * (-MASK_FILL)).astype(scores.dtype)
        attn = softmax_rows(scores)
        context = attn @ v
        merged = self._merge(context)
        out = merged @ self.params["wo"]
        self._cache = (x, q, k, v, attn, merged)
        return out

    def backward(self, dout):
        self._need_cache()
        x, q, k, v, attn, merged = self._cache
        flat_m = merged.reshape(-1, self.d_model)
        flat_d = dout.reshape(-1, self.d_model)
        self.grads["wo"] = flat_m.T @ flat_d
        dmerged = dout @ self.params["wo"].T
        dcontext = self._split(dmerged)
        dattn = dcontext @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(attn, -1, -2) @ dcontext
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(self.dh)
        dq = dscores @ k
        dk = np.swapaxes(dscores, -1, -2) @ q
        flat_x = x.reshape(-1, self.d_model)
        dx = np.zeros_like(x)
        for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
            dflat = self._merge(dproj).reshape(-1, self.d_model)
            self.grads[name] = flat_x.T @ dflat
            dx += (dflat @ self.params[name].T).reshape(x.shape)
        return dx
