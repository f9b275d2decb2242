"""Per-layer FLOP counts for the position-detector architecture.

Counting rules: a convolution costs F_h * F_w * C_in * C_out * H_out * W_out,
a fully-connected layer 2 * C_in * C_out, and one self-attention layer
4 * n^2 * g (queries, keys, values, and score application). All integer
arithmetic.
"""

from __future__ import annotations

from .model import ModelConfig, _ceil_half


def flops_estimate(config: ModelConfig) -> list[tuple[str, int]]:
    """Layer-by-layer FLOPs plus a trailing ("total", sum) row."""
    rows: list[tuple[str, int]] = []
    h, w = config.height, config.width
    c = config.conv_channels
    c_in = 1
    for i in range(3):
        rows.append((f"conv{i + 1} 1x3 ({c_in}->{c}) out {h}x{w}", 3 * c_in * c * h * w))
        h, w = _ceil_half(h), _ceil_half(w)
        c_in = c
    rows.append((f"proj 1x1 ({c}->1) out {h}x{w}", c * 1 * h * w))
    n = config.token_count
    d = config.d_model
    ff = config.ff_hidden
    rows.append((f"embed fc ({config.token_dim}->{d})", 2 * config.token_dim * d))
    for b in range(config.n_blocks):
        label = "masked attention" if b == config.n_blocks - 1 else "attention"
        rows.append((f"block{b + 1} {label} (n={n}, g={d})", 4 * n * n * d))
        rows.append((f"block{b + 1} ff fc ({d}->{ff})", 2 * d * ff))
        rows.append((f"block{b + 1} ff fc ({ff}->{d})", 2 * ff * d))
    rows.append((f"token proj fc ({d}->{config.token_dim})", 2 * d * config.token_dim))
    flat = n * config.token_dim
    rows.append((f"head fc ({flat}->{config.head_hidden})", 2 * flat * config.head_hidden))
    rows.append((f"head fc ({config.head_hidden}->2)", 2 * config.head_hidden * 2))
    rows.append(("total", sum(v for _, v in rows)))
    return rows


def format_flops_table(rows: list[tuple[str, int]]) -> str:
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {val:>14,}" for name, val in rows]
    return "\n".join(lines)
