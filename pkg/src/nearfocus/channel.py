"""Spherical-wave channel synthesis and RIS phase control.

Channels follow the element-pair construction: every entry is
k * exp(-j*2*pi*d/lambda) with d the exact Euclidean distance between the
element pair (no planar approximation) and k the free-space amplitude
lambda/(4*pi*d). A line-of-sight draw scales the whole link and a small
number of point-scatterer paths are added on top.

All randomness flows through an explicit numpy Generator supplied by the
caller; generating one sample per seed keeps datasets reproducible and
embarrassingly parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import backend
from .geometry import (
    ArrayGeometry,
    PolarCoord,
    RisFrame,
    classify_region,
    element_positions,
    rayleigh_distance,
)

SPEED_OF_LIGHT = 299_792_458.0


def path_loss(dist: float, wavelength: float) -> float:
    """Free-space amplitude wavelength / (4*pi*dist)."""
    if dist <= 0:
        raise ValueError("dist must be > 0")
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    return wavelength / (4.0 * math.pi * dist)


@dataclass(frozen=True)
class SimConfig:
    """Physical scenario: arrays, carrier, power, and multipath statistics.

    ``los_gain`` pins the line-of-sight gain to a constant instead of a
    CN(0,1) draw, and ``flat_amplitude`` disables the path-loss taper;
    both exist for oracle configurations with deterministic channels.
    """

    n_bs: int = 256
    m_ris: int = 1024
    fc_hz: float = 60e9
    pt_w: float = 1.0
    n_paths: int = 4
    nlos_var: float = 1e-3
    ris: PolarCoord = field(default_factory=lambda: PolarCoord(65.025, math.pi / 6))
    bs_spacing: Optional[float] = None  # None -> lambda/2
    ris_pitch: Optional[float] = None  # None -> lambda/2
    r_min: float = 3.0
    r_max: float = 100.0
    theta_min: float = -math.pi / 3
    theta_max: float = math.pi / 3
    los_gain: Optional[complex] = None
    flat_amplitude: bool = False

    def __post_init__(self):
        if self.n_bs < 1 or self.m_ris < 1:
            raise ValueError("element counts must be >= 1")
        if self.pt_w <= 0:
            raise ValueError("transmit power must be > 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc_hz

    @property
    def bs_geom(self) -> ArrayGeometry:
        spacing = self.bs_spacing if self.bs_spacing is not None else self.wavelength / 2
        return ArrayGeometry("ula", self.n_bs, spacing)

    @property
    def ris_geom(self) -> ArrayGeometry:
        pitch = self.ris_pitch if self.ris_pitch is not None else self.wavelength / 2
        return ArrayGeometry("upa", self.m_ris, pitch)

    @property
    def bs_rayleigh_m(self) -> float:
        return rayleigh_distance(self.bs_geom.aperture, self.wavelength)

    def deterministic(self) -> "SimConfig":
        """LoS-only copy with unit gain, for geometry-driven metrics."""
        return replace(self, n_paths=1, los_gain=1.0 + 0.0j)


@dataclass(frozen=True)
class RisPhaseConfig:
    """Per-element RIS phase shifts theta_m in [0, 2*pi)."""

    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "phases", np.mod(np.asarray(self.phases, dtype=np.float64), 2.0 * np.pi)
        )

    @property
    def diag_phasors(self) -> np.ndarray:
        return np.exp(1j * self.phases)


@dataclass(frozen=True)
class NoiseModel:
    """AWGN level, tagged with the SNR it was calibrated for and a seed."""

    snr_db: float
    sigma_sq: float
    rng_seed: int

    def __post_init__(self):
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be > 0")


@dataclass
class ChannelSet:
    """One realization of the three links for a single device placement."""

    h_bu: np.ndarray  # (N,)
    h_br: np.ndarray  # (M, N)
    h_re: np.ndarray  # (M,)
    wavelength: float
    device: PolarCoord
    ris: PolarCoord
    cfg: SimConfig

    @property
    def bs_rayleigh_m(self) -> float:
        return self.cfg.bs_rayleigh_m

    def region(self):
        return classify_region(self.device.r, self.bs_rayleigh_m)


def _complex_normal(rng: np.random.Generator, var: float) -> complex:
    scale = math.sqrt(var / 2.0)
    return complex(rng.standard_normal() * scale, rng.standard_normal() * scale)


def _draw_link(
    cfg: SimConfig, rng: np.random.Generator
) -> tuple[complex, list[tuple[PolarCoord, complex]]]:
    """One LoS gain plus (n_paths - 1) scatterer positions and gains.

    Draw order is frozen: LoS gain first, then per path (r, theta, gain).
    """
    if cfg.los_gain is not None:
        g0 = complex(cfg.los_gain)
    else:
        g0 = _complex_normal(rng, 1.0)
    paths = []
    for _ in range(cfg.n_paths - 1):
        r = rng.uniform(cfg.r_min, cfg.r_max)
        theta = rng.uniform(cfg.theta_min, cfg.theta_max)
        gain = _complex_normal(rng, cfg.nlos_var)
        paths.append((PolarCoord(r, theta), gain))
    return g0, paths


def _segment(points_a: np.ndarray, points_b: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Spherical-wave propagation table between two point sets."""
    dists = backend.pairwise_dists(points_a, points_b)
    if np.any(dists < 1e-9):
        raise ValueError("propagation endpoint coincides with an array element")
    return backend.spherical_entries(dists, cfg.wavelength, cfg.flat_amplitude)


def gen_channels(
    cfg: SimConfig,
    device: PolarCoord,
    ris: Optional[PolarCoord] = None,
    rng: Optional[np.random.Generator] = None,
) -> ChannelSet:
    """Synthesize h_BU (N,), H_BR (M, N) and h_RE (M,) for one placement.

    Deterministic given (cfg, device, ris, seed): the generator is consumed
    in a fixed order (links bu, br, re; LoS gain then scatterer paths).
    """
    if ris is None:
        ris = cfg.ris
    if rng is None:
        rng = np.random.default_rng(0)
    if device.r <= 0:
        raise ValueError("device range must be > 0")

    frame = RisFrame.from_polar(ris)
    bs_el = element_positions(cfg.bs_geom)
    ris_el = frame.to_global(element_positions(cfg.ris_geom))
    dev = device.cartesian()[None, :]

    g_bu, paths_bu = _draw_link(cfg, rng)
    g_br, paths_br = _draw_link(cfg, rng)
    g_re, paths_re = _draw_link(cfg, rng)

    h_bu = g_bu * _segment(dev, bs_el, cfg)[0]
    for q, gain in paths_bu:
        qc = q.cartesian()[None, :]
        h_bu = h_bu + gain * _segment(qc, bs_el, cfg)[0] * _segment(qc, dev, cfg)[0, 0]

    h_br = g_br * _segment(ris_el, bs_el, cfg)
    for q, gain in paths_br:
        qc = q.cartesian()[None, :]
        to_bs = _segment(qc, bs_el, cfg)[0]  # (N,)
        to_ris = _segment(ris_el, qc, cfg)[:, 0]  # (M,)
        h_br = h_br + gain * np.outer(to_ris, to_bs)

    h_re = g_re * _segment(dev, ris_el, cfg)[0]
    for q, gain in paths_re:
        qc = q.cartesian()[None, :]
        h_re = h_re + gain * _segment(qc, ris_el, cfg)[0] * _segment(qc, dev, cfg)[0, 0]

    return ChannelSet(
        h_bu=h_bu,
        h_br=h_br,
        h_re=h_re,
        wavelength=cfg.wavelength,
        device=device,
        ris=ris,
        cfg=cfg,
    )


def cascade_gain(ch: ChannelSet, phi: RisPhaseConfig, codeword: np.ndarray) -> complex:
    """h_RE^H diag(e^{j theta}) H_BR f for one BS precoding vector."""
    codeword = np.asarray(codeword)
    if codeword.shape != (ch.h_br.shape[1],):
        raise ValueError("codeword length does not match the BS array")
    if phi.phases.shape != (ch.h_br.shape[0],):
        raise ValueError("phase config length does not match the RIS array")
    incident = ch.h_br @ codeword
    return complex(np.conj(ch.h_re) @ (phi.diag_phasors * incident))


def ris_focus_phases(
    ch: ChannelSet, codeword: np.ndarray, focal: PolarCoord
) -> RisPhaseConfig:
    """Phase shifts that co-phase every cascade path at a focal point.

    ``focal`` is expressed in the RIS local frame. Element m gets
    theta_m = -arg((H_BR f)_m) - (2*pi/lambda) * d_m(focal) mod 2*pi, so all
    reflected paths arrive with a common phase at the focal point; with the
    device there and uniform amplitudes |cascade_gain| is maximal (sum of
    per-path amplitude products). Elements with zero incident field get
    phase 0.
    """
    if focal.r <= 0:
        raise ValueError("focal range must be > 0")
    incident = ch.h_br @ np.asarray(codeword)
    elems = element_positions(ch.cfg.ris_geom)
    d = backend.pairwise_dists(elems, focal.cartesian()[None, :])[:, 0]
    k = 2.0 * np.pi / ch.wavelength
    phases = np.where(
        np.abs(incident) == 0.0, 0.0, -np.angle(incident) - k * d
    )
    return RisPhaseConfig(phases=phases)


def noise_sigma(snr_db: float, ch: ChannelSet, codebook) -> float:
    """Noise power sigma^2 = P_mean / 10^(snr/10).

    P_mean is the mean noiseless received power over all codewords of
    ``codebook`` for this channel realization under its active link branch.
    """
    from .beamscan import noiseless_scan_powers  # local import avoids a cycle

    powers = noiseless_scan_powers(ch, codebook, ch.cfg.pt_w)
    p_mean = float(np.mean(powers[codebook.valid])) if codebook.valid.any() else 0.0
    if p_mean <= 0.0:
        raise ValueError("all-zero received power; cannot calibrate noise")
    return p_mean / (10.0 ** (snr_db / 10.0))
