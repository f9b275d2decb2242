"""Polar-grid beam codebooks: fine L x S grids, the coarse 2 x 2 search
codebook, near-field steering vectors, and RIS-frame conversion.

The fine grid samples spatial frequency uniformly, phi_l = (2l - L - 1)/L
(read as sin of the steering angle), and distance rings r_s = d_ref * s / S.
Each codeword is the exact spherical-wave steering vector at its focal
point, so one grid covers both the focusing (distance-resolving) and
steering regimes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import backend
from .geometry import ArrayGeometry, PolarCoord, element_positions, to_ris_frame


@dataclass(frozen=True)
class CodebookSpec:
    """Grid resolution and range of the fine codebook."""

    L: int
    S: int
    r_min: float
    r_max: float
    beta_delta: float = 1.0
    d_ref: Optional[float] = None  # None -> r_max

    def __post_init__(self):
        if self.L < 1 or self.S < 1:
            raise ValueError("L and S must be >= 1")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.beta_delta < 0:
            raise ValueError("beta_delta must be >= 0")

    @property
    def ring_reference(self) -> float:
        return self.d_ref if self.d_ref is not None else self.r_max


def fine_grid(spec: CodebookSpec) -> tuple[np.ndarray, np.ndarray]:
    """Angular samples phi_l (as sin theta) and ring radii r_s.

    phi_l = (2l - L - 1)/L for l = 1..L; r_s = d_ref * s / S for s = 1..S.
    The angular samples are strictly increasing and antisymmetric about 0.
    """
    ll = np.arange(1, spec.L + 1, dtype=np.float64)
    ss = np.arange(1, spec.S + 1, dtype=np.float64)
    phi = (2.0 * ll - spec.L - 1.0) / spec.L
    radii = spec.ring_reference * ss / spec.S
    return phi, radii


def steering_vector(
    geom: ArrayGeometry, focal: PolarCoord, wavelength: float
) -> np.ndarray:
    """Unit-norm spherical-wave steering vector for a focal point.

    Entry n is (1/sqrt(count)) * exp(-j*2*pi/lambda * (d_n - r)) with d_n the
    exact distance from element n (array local frame) to the focal point.
    """
    if focal.r <= 0:
        raise ValueError("focal range must be > 0")
    elems = element_positions(geom)
    d = backend.pairwise_dists(elems, focal.cartesian()[None, :])[:, 0]
    if np.any(d < 1e-9):
        raise ValueError("focal point coincides with an array element")
    k = 2.0 * np.pi / wavelength
    return np.exp(-1j * k * (d - focal.r)) / math.sqrt(geom.num_elements)


@dataclass
class Codebook:
    """L x S grid of focal points with lazily built steering weights.

    ``frame`` is "bs" (weights over the BS ULA) or "ris" (weights over the
    RIS panel, focal points in the RIS local frame). ``valid`` flags cells
    whose focal point survived frame conversion.
    """

    frame: str
    L: int
    S: int
    focal_r: np.ndarray  # (L, S)
    focal_theta: np.ndarray  # (L, S)
    valid: np.ndarray  # (L, S) bool
    geom: ArrayGeometry
    wavelength: float
    d_ref: float
    phi: Optional[np.ndarray] = None  # (L,) sin-theta samples for BS grids
    _weights: Optional[np.ndarray] = field(default=None, repr=False)
    _focal_dists: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L, self.S)

    @property
    def num_elements(self) -> int:
        return self.geom.num_elements

    def focal(self, l: int, s: int) -> PolarCoord:
        return PolarCoord(float(self.focal_r[l, s]), float(self.focal_theta[l, s]))

    def focal_dists(self) -> np.ndarray:
        """(count, L*S) element-to-focal distance table, cached.

        Invalid cells get distance 0 columns; scan code masks them out.
        """
        if self._focal_dists is None:
            elems = element_positions(self.geom)
            r = self.focal_r.ravel()
            th = self.focal_theta.ravel()
            ok = self.valid.ravel()
            pts = np.zeros((r.size, 3))
            pts[ok, 0] = r[ok] * np.cos(th[ok])
            pts[ok, 1] = r[ok] * np.sin(th[ok])
            d = backend.pairwise_dists(elems, pts)
            d[:, ~ok] = 0.0
            self._focal_dists = d
        return self._focal_dists

    def weights(self) -> np.ndarray:
        """(L, S, count) complex steering weights; invalid cells are zero."""
        if self._weights is None:
            d = self.focal_dists()
            k = 2.0 * np.pi / self.wavelength
            w = np.exp(-1j * k * (d - self.focal_r.ravel()[None, :]))
            w /= math.sqrt(self.num_elements)
            w[:, ~self.valid.ravel()] = 0.0
            self._weights = np.ascontiguousarray(
                w.T.reshape(self.L, self.S, self.num_elements)
            )
        return self._weights

    def codeword(self, l: int, s: int) -> "Codeword":
        return Codeword(
            weights=self.weights()[l, s].copy(),
            grid_index=(l, s),
            focal=self.focal(l, s),
            frame=self.frame,
        )


@dataclass(frozen=True)
class Codeword:
    """One precoding vector tagged with its grid cell and focal point."""

    weights: np.ndarray
    grid_index: tuple[int, int]
    focal: PolarCoord
    frame: str


def build_fine_codebook(
    spec: CodebookSpec, geom: ArrayGeometry, wavelength: float
) -> Codebook:
    """Fine L x S BS-frame codebook on the Eq.-style polar grid."""
    phi, radii = fine_grid(spec)
    if np.any(np.abs(phi) >= 1.0):
        raise ValueError("angular sample |phi| >= 1 cannot be a sine")
    theta = np.arcsin(phi)
    focal_r = np.tile(radii[None, :], (spec.L, 1))
    focal_theta = np.tile(theta[:, None], (1, spec.S))
    return Codebook(
        frame="bs",
        L=spec.L,
        S=spec.S,
        focal_r=focal_r,
        focal_theta=focal_theta,
        valid=np.ones((spec.L, spec.S), dtype=bool),
        geom=geom,
        wavelength=wavelength,
        d_ref=spec.ring_reference,
        phi=phi,
    )


def build_coarse_codebook(
    aperture: float, wavelength: float, theta_span: float, geom: ArrayGeometry
) -> Codebook:
    """2 x 2 coarse search codebook.

    The four focal points sit at angles +-theta_span/2 and radii
    D^2/(10*lambda) and 11*D^2/(10*lambda); with the Rayleigh distance
    d = 2 D^2 / lambda those radii are d/20 and 11 d/20, one per region.
    """
    if aperture <= 0:
        raise ValueError("aperture must be > 0")
    r_near = aperture * aperture / (10.0 * wavelength)
    r_far = 11.0 * aperture * aperture / (10.0 * wavelength)
    angles = np.array([-theta_span / 2.0, theta_span / 2.0])
    radii = np.array([r_near, r_far])
    focal_r = np.tile(radii[None, :], (2, 1))
    focal_theta = np.tile(angles[:, None], (1, 2))
    return Codebook(
        frame="bs",
        L=2,
        S=2,
        focal_r=focal_r,
        focal_theta=focal_theta,
        valid=np.ones((2, 2), dtype=bool),
        geom=geom,
        wavelength=wavelength,
        d_ref=r_far,
        phi=np.sin(angles),
    )


def check_sampling_constraint(
    r_prev: float, r_curr: float, spec: CodebookSpec, d_e: float, wavelength: float
) -> bool:
    """Near-field ring-spacing test |r_curr - r_prev| >= 2*lambda*beta^2*|r_curr*r_prev|/d_e^2."""
    if r_prev <= 0 or r_curr <= 0:
        raise ValueError("ring radii must be > 0")
    rhs = 2.0 * wavelength * spec.beta_delta**2 * abs(r_curr * r_prev) / (d_e * d_e)
    return abs(r_curr - r_prev) >= rhs


def codebook_to_ris_frame(
    cb: Codebook, ris: PolarCoord, ris_geom: ArrayGeometry, wavelength: float
) -> Codebook:
    """Map a BS-frame codebook onto the RIS panel.

    Every focal point runs through the frame conversion; codewords become
    RIS-frame steering vectors on the converted points. Cells whose focal
    point coincides with the panel are flagged invalid, as are cells that
    land behind the panel plane (|theta_ris| >= pi/2): a reflecting surface
    only serves its front half-space, and a planar array cannot tell a
    point from its mirror image across the panel plane, so back-side cells
    would duplicate front-side ones.
    """
    if cb.frame != "bs":
        raise ValueError("expected a BS-frame codebook")
    focal_r = np.empty_like(cb.focal_r)
    focal_theta = np.empty_like(cb.focal_theta)
    valid = np.ones(cb.shape, dtype=bool)
    for l in range(cb.L):
        for s in range(cb.S):
            conv = to_ris_frame(cb.focal(l, s), ris)
            focal_r[l, s] = conv.r
            focal_theta[l, s] = conv.theta
            if conv.r <= 0 or not math.isfinite(conv.theta) or abs(conv.theta) >= math.pi / 2:
                valid[l, s] = False
                focal_theta[l, s] = 0.0 if not math.isfinite(conv.theta) else focal_theta[l, s]
    return Codebook(
        frame="ris",
        L=cb.L,
        S=cb.S,
        focal_r=focal_r,
        focal_theta=focal_theta,
        valid=valid,
        geom=ris_geom,
        wavelength=wavelength,
        d_ref=cb.d_ref,
        phi=None if cb.phi is None else cb.phi.copy(),
    )


def export_codebook(cb: Codebook, out_dir: str | Path) -> None:
    """Write a JSON manifest plus a little-endian complex64 weight blob.

    The blob is row-major in (l, s, element) order; the manifest records the
    grid, frame, and geometry needed to reinterpret it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "nearfocus-codebook",
        "version": 1,
        "frame": cb.frame,
        "L": cb.L,
        "S": cb.S,
        "num_elements": cb.num_elements,
        "array_kind": cb.geom.kind,
        "element_spacing_m": cb.geom.element_spacing,
        "wavelength_m": cb.wavelength,
        "d_ref_m": cb.d_ref,
        "weights_file": "weights.c64",
        "weights_dtype": "complex64-le",
        "weights_order": "(l, s, element) row-major",
        "focal_r_m": cb.focal_r.tolist(),
        "focal_theta_rad": cb.focal_theta.tolist(),
        "valid": cb.valid.astype(int).tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    blob = cb.weights().astype("<c8")
    blob.tofile(out / "weights.c64")


def load_codebook_manifest(out_dir: str | Path) -> tuple[dict, np.ndarray]:
    """Read back an exported codebook (manifest dict + weight array)."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    shape = (manifest["L"], manifest["S"], manifest["num_elements"])
    weights = np.fromfile(out / manifest["weights_file"], dtype="<c8").reshape(shape)
    return manifest, weights
