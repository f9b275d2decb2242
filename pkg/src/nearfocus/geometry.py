"""Coordinate frames, array element layouts, and field-region classification.

Conventions (used consistently by every module):

* The global frame is centered on the BS array with boresight along +x;
  a polar coordinate (r, theta) maps to Cartesian (r*cos(theta),
  r*sin(theta), 0). The simulated world is planar in azimuth + range;
  array panels may extend in z.
* A ULA of N elements sits on the y axis with element n at
  (0, -delta_n * d_e, 0), delta_n = (2n - N + 1)/2. The minus sign makes
  the far-field phase profile of a steering vector equal
  -(2*pi/lambda) * delta_n * d_e * sin(theta).
* A UPA of M elements is a centered sqrt(M) x sqrt(M) grid spanning the
  local -y (horizontal, same sign convention as the ULA) and +z axes.
* The RIS local frame has its boresight (+x) pointing from the panel back
  toward the BS origin, which is also roughly toward the served devices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolarCoord:
    """Planar polar coordinate: range in meters, azimuth in radians."""

    r: float
    theta: float

    def cartesian(self) -> np.ndarray:
        """(x, y, z) position in the frame this coordinate lives in."""
        return np.array(
            [self.r * math.cos(self.theta), self.r * math.sin(self.theta), 0.0]
        )


class FieldRegion(enum.Enum):
    BFR = "bfr"
    NBFR = "nbfr"
    FAR_FIELD = "far_field"


@dataclass(frozen=True)
class ArrayGeometry:
    """Element layout of a ULA (BS) or square UPA (RIS) panel.

    ``element_spacing`` is the physical pitch between adjacent elements.
    For a UPA, ``num_elements`` must be a perfect square.
    """

    kind: str  # "ula" | "upa"
    num_elements: int
    element_spacing: float

    def __post_init__(self):
        if self.kind not in ("ula", "upa"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.num_elements < 1:
            raise ValueError("num_elements must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be > 0")
        if self.kind == "upa":
            side = math.isqrt(self.num_elements)
            if side * side != self.num_elements:
                raise ValueError("UPA element count must be a perfect square")

    @property
    def side(self) -> int:
        return math.isqrt(self.num_elements) if self.kind == "upa" else self.num_elements

    @property
    def aperture(self) -> float:
        """Geometric extent (count_per_side - 1) * spacing of one axis."""
        return (self.side - 1) * self.element_spacing


def rayleigh_distance(aperture: float, wavelength: float) -> float:
    """Near-field boundary 2*D^2/lambda for an aperture of size D."""
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    if aperture < 0:
        raise ValueError("aperture must be >= 0")
    return 2.0 * aperture * aperture / wavelength


def classify_region(r: float, d: float) -> FieldRegion:
    """Classify a range against the Rayleigh distance ``d``.

    BFR for r <= d/10 (boundary inclusive), NBFR for d/10 < r <= d, and
    far field beyond d.
    """
    if r <= 0:
        raise ValueError("r must be > 0")
    if d <= 0:
        raise ValueError("d must be > 0")
    if r <= d / 10.0:
        return FieldRegion.BFR
    if r <= d:
        return FieldRegion.NBFR
    return FieldRegion.FAR_FIELD


def axis_offsets(count: int, spacing: float) -> np.ndarray:
    """Centered offsets delta_n * spacing, delta_n = (2n - count + 1)/2."""
    n = np.arange(count, dtype=np.float64)
    return (2.0 * n - count + 1.0) / 2.0 * spacing


def element_positions(geom: ArrayGeometry) -> np.ndarray:
    """Element coordinates in the array's local frame, shape (count, 3).

    ULA: element n at (0, -offset_n, 0). UPA: row-major over (horizontal,
    vertical) with element (a, b) at (0, -offset_a, offset_b).
    """
    if geom.kind == "ula":
        off = axis_offsets(geom.num_elements, geom.element_spacing)
        pos = np.zeros((geom.num_elements, 3))
        pos[:, 1] = -off
        return pos
    side = geom.side
    off = axis_offsets(side, geom.element_spacing)
    pos = np.zeros((geom.num_elements, 3))
    hh, vv = np.meshgrid(-off, off, indexing="ij")
    pos[:, 1] = hh.ravel()
    pos[:, 2] = vv.ravel()
    return pos


@dataclass(frozen=True)
class RisFrame:
    """Rigid placement of the RIS panel in the global (BS) frame."""

    origin: np.ndarray  # (3,)
    x_axis: np.ndarray  # boresight, toward the BS
    y_axis: np.ndarray
    z_axis: np.ndarray

    @classmethod
    def from_polar(cls, ris: PolarCoord) -> "RisFrame":
        if ris.r <= 0:
            raise ValueError("RIS must not sit on the BS origin")
        origin = ris.cartesian()
        bore = -origin / np.linalg.norm(origin)
        y_axis = np.array([-bore[1], bore[0], 0.0])
        return cls(origin=origin, x_axis=bore, y_axis=y_axis, z_axis=np.array([0.0, 0.0, 1.0]))

    def to_global(self, local_points: np.ndarray) -> np.ndarray:
        basis = np.stack([self.x_axis, self.y_axis, self.z_axis])
        return self.origin + np.asarray(local_points) @ basis

    def local_polar(self, point: np.ndarray) -> PolarCoord:
        delta = np.asarray(point, dtype=np.float64) - self.origin
        lx = float(delta @ self.x_axis)
        ly = float(delta @ self.y_axis)
        r = math.hypot(lx, ly)
        return PolarCoord(r=r, theta=math.atan2(ly, lx))


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def to_ris_frame(device: PolarCoord, ris: PolarCoord) -> PolarCoord:
    """Convert a device position from the BS frame to the RIS local frame.

    The range is the law-of-cosines distance
    sqrt(r_s^2 + r_l^2 - 2 r_s r_l cos(theta_s - theta_l)); the azimuth is
    the exact bearing of the device from the panel, measured against the
    panel boresight (which faces the BS). A coincident device returns r=0
    with theta=nan; the caller must handle that cell.
    """
    if device.r <= 0 or ris.r <= 0:
        raise ValueError("device and RIS ranges must be > 0")
    rr = (
        ris.r * ris.r
        + device.r * device.r
        - 2.0 * ris.r * device.r * math.cos(ris.theta - device.theta)
    )
    r_ris = math.sqrt(max(rr, 0.0))
    if r_ris < 1e-12:
        return PolarCoord(r=0.0, theta=math.nan)
    dx = device.r * math.cos(device.theta) - ris.r * math.cos(ris.theta)
    dy = device.r * math.sin(device.theta) - ris.r * math.sin(ris.theta)
    bearing = math.atan2(dy, dx)
    theta_ris = wrap_angle(bearing - (ris.theta + math.pi))
    return PolarCoord(r=r_ris, theta=theta_ris)
