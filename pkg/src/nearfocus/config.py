"""Run configuration: scale presets, key=value config files, and digests.

Two presets resolve every parameter:

* ``paper`` - the full protocol (N=256, M=1024, L=S=100, SNR -10..20 dB in
  5 dB steps, 100 coarse + 1000 fine samples per SNR, 100 epochs).
* ``desk`` - a proportionally scaled scenario (N=64, M=256 as a 16x16
  panel, L=S=32, SNR {-10, 0, 10, 20} dB, 80 + 800 samples per SNR,
  60 epochs) whose sampling range shrinks with the Rayleigh distance so
  both field regions stay populated. It finishes in minutes on one core.

Config files are UTF-8 ``key = value`` lines with ``#`` comments and
namespaced keys (``sim.n``, ``codebook.L``, ``train.lr``, ...).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .channel import SimConfig
from .codebook import CodebookSpec
from .geometry import PolarCoord
from .nn.model import ModelConfig
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


@dataclass(frozen=True)
class DataConfig:
    snr_list: tuple[float, ...]
    stage1_count: int
    stage2_count: int
    snap: bool = True  # place devices on the fine grid's own resolution


@dataclass(frozen=True)
class RunConfig:
    scale: str
    seed: int
    sim: SimConfig
    codebook: CodebookSpec
    data: DataConfig
    train: TrainingConfig
    model: ModelConfig

    def counts(self) -> dict[str, int]:
        return {"coarse": self.data.stage1_count, "fine": self.data.stage2_count}

    def to_dict(self) -> dict:
        d = {
            "scale": self.scale,
            "seed": self.seed,
            "sim": dataclasses.asdict(self.sim),
            "codebook": dataclasses.asdict(self.codebook),
            "data": dataclasses.asdict(self.data),
            "train": dataclasses.asdict(self.train),
            "model": dataclasses.asdict(self.model),
        }
        d["sim"]["ris"] = [self.sim.ris.r, self.sim.ris.theta]
        if d["sim"]["los_gain"] is not None:
            d["sim"]["los_gain"] = [self.sim.los_gain.real, self.sim.los_gain.imag]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _build_sim(n_bs: int, m_ris: int, fc_hz: float = 60e9) -> SimConfig:
    """Scenario scaled off the BS Rayleigh distance.

    The sampling range keeps the full protocol's proportions (3..100 m
    against d ~ 162 m); the RIS sits at 0.4 d off-boresight; the panel pitch
    spreads M elements so one side spans the effective aperture M * lambda/2,
    which is what lets the panel focus across the whole near field.
    """
    wl = SimConfig(n_bs=n_bs, m_ris=m_ris, fc_hz=fc_hz).wavelength
    d = 2.0 * ((n_bs - 1) * wl / 2.0) ** 2 / wl
    d_paper = 2.0 * (255 * wl / 2.0) ** 2 / wl
    ratio = d / d_paper
    side = math.isqrt(m_ris)
    pitch = m_ris * (wl / 2.0) / (side - 1)
    # the panel sits at 0.66 d, which keeps every grid focal point strictly in
    # front of the panel plane (no mirror-degenerate cells) while staying
    # inside the near field
    return SimConfig(
        n_bs=n_bs,
        m_ris=m_ris,
        fc_hz=fc_hz,
        pt_w=1.0,
        n_paths=4,
        nlos_var=1e-3,
        ris=PolarCoord(0.66 * d, math.pi / 6),
        ris_pitch=pitch,
        r_min=3.0 * ratio,
        r_max=100.0 * ratio,
        theta_min=-math.pi / 3,
        theta_max=math.pi / 3,
    )


def preset(scale: str, seed: int = 0) -> RunConfig:
    if scale == "paper":
        sim = _build_sim(256, 1024)
        cb = CodebookSpec(L=100, S=100, r_min=sim.r_min, r_max=sim.r_max)
        data = DataConfig(
            snr_list=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
            stage1_count=100,
            stage2_count=1000,
        )
        train = TrainingConfig(epochs=100, batch_size=32, learning_rate=1e-3,
                               lr_halving_period=50, seed=seed, stage="fine")
        model = ModelConfig(height=100, width=100)
    elif scale == "desk":
        sim = _build_sim(64, 256)
        cb = CodebookSpec(L=32, S=32, r_min=sim.r_min, r_max=sim.r_max)
        data = DataConfig(
            snr_list=(-10.0, 0.0, 10.0, 20.0),
            stage1_count=80,
            stage2_count=800,
        )
        train = TrainingConfig(epochs=60, batch_size=32, learning_rate=1e-3,
                               lr_halving_period=50, seed=seed, stage="fine")
        model = ModelConfig(height=32, width=32)
    else:
        raise ConfigError(f"unknown scale {scale!r}; use 'desk' or 'paper'")
    return RunConfig(scale=scale, seed=seed, sim=sim, codebook=cb, data=data,
                     train=train, model=model)


# ---------------------------------------------------------------------------
# key = value files


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_float_list(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(",", " ").split())


_KEY_HANDLERS = {
    "sim.n": ("sim", "n_bs", int),
    "sim.m": ("sim", "m_ris", int),
    "sim.fc_hz": ("sim", "fc_hz", float),
    "sim.pt_w": ("sim", "pt_w", float),
    "sim.n_paths": ("sim", "n_paths", int),
    "sim.nlos_var": ("sim", "nlos_var", float),
    "sim.r_min": ("sim", "r_min", float),
    "sim.r_max": ("sim", "r_max", float),
    "sim.theta_min": ("sim", "theta_min", float),
    "sim.theta_max": ("sim", "theta_max", float),
    "sim.ris_r": ("sim", "ris_r", float),
    "sim.ris_theta": ("sim", "ris_theta", float),
    "sim.ris_pitch": ("sim", "ris_pitch", float),
    "sim.bs_spacing": ("sim", "bs_spacing", float),
    "codebook.l": ("codebook", "L", int),
    "codebook.s": ("codebook", "S", int),
    "codebook.beta_delta": ("codebook", "beta_delta", float),
    "codebook.d_ref": ("codebook", "d_ref", float),
    "data.snr_list": ("data", "snr_list", _parse_float_list),
    "data.stage1_count": ("data", "stage1_count", int),
    "data.stage2_count": ("data", "stage2_count", int),
    "data.snap": ("data", "snap", _parse_bool),
    "train.lr": ("train", "learning_rate", float),
    "train.batch_size": ("train", "batch_size", int),
    "train.epochs": ("train", "epochs", int),
    "train.lr_halving_period": ("train", "lr_halving_period", int),
    "model.conv_channels": ("model", "conv_channels", int),
    "model.d_model": ("model", "d_model", int),
    "model.n_heads": ("model", "n_heads", int),
    "model.ff_dim": ("model", "ff_dim", int),
    "model.head_hidden": ("model", "head_hidden", int),
    "run.seed": ("run", "seed", int),
}


def apply_overrides(rc: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Return a RunConfig with file/flag overrides applied.

    Raises ConfigError naming the offending key on unknown keys or
    unparseable values. Grid overrides re-derive the model input shape and
    range overrides re-derive the codebook range.
    """
    sections = {
        "sim": dict(),
        "codebook": dict(),
        "data": dict(),
        "train": dict(),
        "model": dict(),
        "run": dict(),
    }
    for key, raw in overrides.items():
        handler = _KEY_HANDLERS.get(key.lower())
        if handler is None:
            raise ConfigError(f"unknown config key {key!r}")
        section, fname, conv = handler
        try:
            sections[section][fname] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: bad value {raw!r} ({exc})") from exc

    sim_kw = sections["sim"]
    ris_r = sim_kw.pop("ris_r", None)
    ris_theta = sim_kw.pop("ris_theta", None)
    sim = dataclasses.replace(rc.sim, **sim_kw)
    if ris_r is not None or ris_theta is not None:
        sim = dataclasses.replace(
            sim,
            ris=PolarCoord(
                ris_r if ris_r is not None else sim.ris.r,
                ris_theta if ris_theta is not None else sim.ris.theta,
            ),
        )
    cb_kw = sections["codebook"]
    cb_kw.setdefault("r_min", sim.r_min)
    cb_kw.setdefault("r_max", sim.r_max)
    cb = dataclasses.replace(rc.codebook, **cb_kw)
    data = dataclasses.replace(rc.data, **sections["data"])
    seed = sections["run"].get("seed", rc.seed)
    train = dataclasses.replace(rc.train, seed=seed, **sections["train"])
    model = dataclasses.replace(rc.model, height=cb.L, width=cb.S, **sections["model"])
    return RunConfig(scale=rc.scale, seed=seed, sim=sim, codebook=cb,
                     data=data, train=train, model=model)


def load_run_config(
    scale: str,
    seed: Optional[int] = None,
    config_file: Optional[str | Path] = None,
    set_overrides: Optional[list[str]] = None,
) -> RunConfig:
    rc = preset(scale, seed=0 if seed is None else seed)
    overrides: dict[str, str] = {}
    if config_file is not None:
        overrides.update(parse_config_text(Path(config_file).read_text()))
    for item in set_overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if seed is not None:
        overrides["run.seed"] = str(seed)
    return apply_overrides(rc, overrides)
