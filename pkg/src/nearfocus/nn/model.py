"""The position-detector architecture and its weight file format.

Pipeline: three conv blocks (1x3 conv + BN + ReLU + 2x2 ceil max-pool)
collapse the scan map spatially; a 1x1 projection drops the channels back
to one; each remaining row becomes a token; tokens are embedded and run
through three attention blocks (the last one masked, causal + padding);
a per-token projection restores the row width; the flattened features feed
a two-layer head ending in a sigmoid, producing normalized (r, theta).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .layers import (
    BatchNorm,
    Conv1x1,
    Conv1x3,
    Dense,
    LayerNorm,
    MaxPool2x2,
    MultiHeadSelfAttention,
    ReLU,
    Sigmoid,
    build_masks,
)

WEIGHT_MAGIC = b"NFWT"
WEIGHT_VERSION = 1


def _ceil_half(x: int) -> int:
    return (x + 1) // 2


def pooled_extent(x: int, stages: int = 3) -> int:
    for _ in range(stages):
        x = _ceil_half(x)
    return x


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; the defaults match the full-scale layer table."""

    height: int = 100
    width: int = 100
    conv_channels: int = 64
    d_model: int = 64
    n_heads: int = 4
    ff_dim: Optional[int] = None  # None -> 4 * d_model
    head_hidden: int = 128
    n_blocks: int = 3

    @property
    def token_count(self) -> int:
        return pooled_extent(self.height)

    @property
    def token_dim(self) -> int:
        return pooled_extent(self.width)

    @property
    def ff_hidden(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.d_model

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


class _FiniteGuard:
    """Raises with the offending layer name if an activation goes non-finite."""

    @staticmethod
    def check(name: str, x: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite activation after layer {name!r}")
        return x


class PositionNet:
    """Scan map -> normalized (r, theta) regressor.

    ``dtype`` selects the compute precision: float64 for gradient checks
    and verification, float32 for training throughput.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c = config.conv_channels
        d = config.d_model
        self.layers: dict[str, object] = {}

        def add(name, layer):
            self.layers[name] = layer
            return layer

        self.conv_stack = []
        c_in = 1
        for i in range(3):
            block = (
                add(f"conv{i}", Conv1x3(c_in, c, rng, dtype=dtype)),
                add(f"bn{i}", BatchNorm(c, dtype=dtype)),
                add(f"relu{i}", ReLU()),
                add(f"pool{i}", MaxPool2x2()),
            )
            self.conv_stack.append(block)
            c_in = c
        self.proj = add("proj", Conv1x1(c, 1, rng, dtype=dtype))
        self.embed = add("embed", Dense(config.token_dim, d, rng, dtype=dtype))
        self.blocks = []
        for b in range(config.n_blocks):
            blk = {
                "attn": add(f"attn{b}", MultiHeadSelfAttention(d, config.n_heads, rng, dtype=dtype)),
                "ln1": add(f"ln1_{b}", LayerNorm(d, dtype=dtype)),
                "ff1": add(f"ff1_{b}", Dense(d, config.ff_hidden, rng, dtype=dtype)),
                "ffrelu": add(f"ffrelu{b}", ReLU()),
                "ff2": add(f"ff2_{b}", Dense(config.ff_hidden, d, rng, dtype=dtype)),
                "ln2": add(f"ln2_{b}", LayerNorm(d, dtype=dtype)),
            }
            self.blocks.append(blk)
        self.out_proj = add("out_proj", Dense(d, config.token_dim, rng, dtype=dtype))
        self.fc1 = add("fc1", Dense(config.token_count * config.token_dim, config.head_hidden, rng, dtype=dtype))
        self.fc_relu = add("fc_relu", ReLU())
        self.fc2 = add("fc2", Dense(config.head_hidden, 2, rng, dtype=dtype))
        self.out_act = add("sigmoid", Sigmoid())
        self._mask_cache: Optional[np.ndarray] = None

    # -- parameter plumbing ------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                out[f"{lname}.{pname}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.grads.items():
                out[f"{lname}.{pname}"] = arr
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for bname, arr in layer.buffers.items():
                out[f"{lname}.{bname}"] = arr
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        lname, pname = name.split(".")
        self.layers[lname].params[pname] = value

    # -- forward / backward -------------------------------------------------

    def token_validity(self, row_valid: np.ndarray) -> np.ndarray:
        """Aggregate per-map row validity down to per-token validity."""
        b, h = row_valid.shape
        n = self.config.token_count
        factor = 8  # three ceil-halvings
        out = np.zeros((b, n), dtype=bool)
        for i in range(n):
            out[:, i] = row_valid[:, i * factor : min((i + 1) * factor, h)].any(axis=1)
        return out

    def forward(
        self,
        maps: np.ndarray,
        row_valid: Optional[np.ndarray] = None,
        train: bool = False,
    ) -> np.ndarray:
        """maps (B, H, W) -> predictions (B, 2) in (0, 1)^2."""
        cfg = self.config
        if maps.ndim != 3 or maps.shape[1:] != (cfg.height, cfg.width):
            raise ValueError(
                f"expected maps of shape (B, {cfg.height}, {cfg.width}), got {maps.shape}"
            )
        x = maps[:, None, :, :].astype(self.dtype)
        for i, (conv, bn, relu, pool) in enumerate(self.conv_stack):
            x = _FiniteGuard.check(f"conv{i}", conv.forward(x, train))
            x = _FiniteGuard.check(f"bn{i}", bn.forward(x, train))
            x = relu.forward(x, train)
            x = pool.forward(x, train)
        x = _FiniteGuard.check("proj", self.proj.forward(x, train))
        b = x.shape[0]
        tokens = x[:, 0, :, :]  # (B, n, token_dim)
        z = _FiniteGuard.check("embed", self.embed.forward(tokens, train))
        if row_valid is None:
            token_valid = np.ones((b, cfg.token_count), dtype=bool)
        else:
            token_valid = self.token_validity(row_valid)
        mask = build_masks(token_valid, causal=True)
        self._mask_cache = mask
        for bi, blk in enumerate(self.blocks):
            use_mask = mask if bi == cfg.n_blocks - 1 else None
            a = blk["attn"].forward(z, train, mask=use_mask)
            z = blk["ln1"].forward(z + a, train)
            f = blk["ff2"].forward(blk["ffrelu"].forward(blk["ff1"].forward(z, train), train), train)
            z = blk["ln2"].forward(z + f, train)
            _FiniteGuard.check(f"block{bi}", z)
        t = self.out_proj.forward(z, train)  # (B, n, token_dim)
        flat = t.reshape(b, cfg.token_count * cfg.token_dim)
        self._flat_shape = t.shape
        h1 = self.fc_relu.forward(self.fc1.forward(flat, train), train)
        out = self.out_act.forward(self.fc2.forward(h1, train), train)
        return _FiniteGuard.check("head", out)

    def backward(self, dout: np.ndarray) -> None:
        """Accumulate gradients for every parameter from d(prediction)."""
        d = self.out_act.backward(dout)
        d = self.fc2.backward(d)
        d = self.fc_relu.backward(d)
        d = self.fc1.backward(d)
        d = d.reshape(self._flat_shape)
        d = self.out_proj.backward(d)
        for blk in reversed(self.blocks):
            d_norm = blk["ln2"].backward(d)
            d_ff = blk["ff1"].backward(blk["ffrelu"].backward(blk["ff2"].backward(d_norm)))
            d = d_norm + d_ff
            d_norm = blk["ln1"].backward(d)
            d_attn = blk["attn"].backward(d_norm)
            d = d_norm + d_attn
        d = self.embed.backward(d)
        d = d[:, None, :, :]
        d = self.proj.backward(d)
        for conv, bn, relu, pool in reversed(self.conv_stack):
            d = pool.backward(d)
            d = relu.backward(d)
            d = bn.backward(d)
            d = conv.backward(d)

    # -- serialization -------------------------------------------------------

    def save_weights(self, path: str | Path) -> None:
        save_weight_file(path, self.config, self.params(), self.buffers())

    def load_weights(self, path: str | Path) -> None:
        tensors = load_weight_file(path, self.config)
        for name, arr in tensors.items():
            lname, pname = name.split(".")
            layer = self.layers[lname]
            if pname in layer.params:
                layer.params[pname] = arr.astype(self.dtype)
            else:
                layer.buffers[pname] = arr.astype(self.dtype)


class Stage1Net:
    """Coarse-map head: 4 -> 16 (ReLU) -> 2 (sigmoid), same training loop."""

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0, dtype=np.float64):
        self.config = config or ModelConfig(height=2, width=2)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.layers = {
            "fc1": Dense(4, 16, rng, dtype=dtype),
            "relu": ReLU(),
            "fc2": Dense(16, 2, rng, dtype=dtype),
            "sigmoid": Sigmoid(),
        }

    def params(self):
        return {
            f"{lname}.{p}": arr
            for lname, layer in self.layers.items()
            for p, arr in getattr(layer, "params", {}).items()
        }

    def grads(self):
        return {
            f"{lname}.{p}": arr
            for lname, layer in self.layers.items()
            for p, arr in getattr(layer, "grads", {}).items()
        }

    def buffers(self):
        return {}

    def set_param(self, name, value):
        lname, pname = name.split(".")
        self.layers[lname].params[pname] = value

    def forward(self, maps, row_valid=None, train=False):
        x = maps.reshape(maps.shape[0], -1).astype(self.dtype)
        if x.shape[1] != 4:
            raise ValueError("stage-1 input must flatten to 4 values")
        h = self.layers["relu"].forward(self.layers["fc1"].forward(x, train), train)
        return self.layers["sigmoid"].forward(self.layers["fc2"].forward(h, train), train)

    def backward(self, dout):
        d = self.layers["sigmoid"].backward(dout)
        d = self.layers["fc2"].backward(d)
        d = self.layers["relu"].backward(d)
        self.layers["fc1"].backward(d)

    def save_weights(self, path):
        save_weight_file(path, self.config, self.params(), self.buffers())

    def load_weights(self, path):
        tensors = load_weight_file(path, self.config)
        for name, arr in tensors.items():
            self.set_param(name, arr.astype(self.dtype))


def save_weight_file(
    path: str | Path,
    config: ModelConfig,
    params: dict[str, np.ndarray],
    buffers: dict[str, np.ndarray],
) -> None:
    """NFWT weight file: magic, version, config digest, then float32 tensors
    in declaration order (params first, then buffers)."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", WEIGHT_VERSION))
        fh.write(config.digest())
        for _, arr in list(params.items()) + list(buffers.items()):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weight_file(path: str | Path, config: ModelConfig) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: not a weight file")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != WEIGHT_VERSION:
        raise ValueError(f"{path}: unsupported weight version {version}")
    digest = raw[8:40]
    if digest != config.digest():
        raise ValueError(f"{path}: weight file was trained with a different architecture config")
    # shapes come from a freshly built model of the same config
    probe = (
        Stage1Net(config) if (config.height, config.width) == (2, 2) else PositionNet(config)
    )
    tensors = dict(probe.params())
    tensors.update(probe.buffers())
    out = {}
    offset = 40
    for name, arr in tensors.items():
        count = arr.size
        chunk = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        out[name] = chunk.astype(np.float64).reshape(arr.shape)
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in weight file")
    return out
