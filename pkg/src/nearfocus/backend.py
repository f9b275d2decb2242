"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``NEARFOCUS_BACKEND``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``. Both paths compute the same double-precision arithmetic; results
agree to ~1e-15 relative (summation order differs), and each backend is
bit-deterministic run to run.

Kernels here are the profiled hot spots: element-pair distance tables,
spherical-wave channel entries (amplitude x phase), and the per-codeword
matched-phase cascade reduction used by RIS scan maps. Everything else in
the package is plain vectorized numpy.
"""

from __future__ import annotations

import os

import numpy as np

_FOUR_PI = 4.0 * np.pi

_requested = os.environ.get("NEARFOCUS_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"NEARFOCUS_BACKEND={_requested!r} is not valid; use 'numba' or 'numpy'"
    )

if _requested in ("", "numba"):
    try:
        import numba

        _HAS_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise RuntimeError(
                "NEARFOCUS_BACKEND=numba requested but numba is not importable"
            )
        _HAS_NUMBA = False
else:
    _HAS_NUMBA = False

ACTIVE_BACKEND = "numba" if _HAS_NUMBA else "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return ACTIVE_BACKEND


# ---------------------------------------------------------------------------
# pure-numpy reference path


def _np_pairwise_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _np_spherical_entries(dists: np.ndarray, wavelength: float, flat: bool) -> np.ndarray:
    phase = np.exp((-2j * np.pi / wavelength) * dists)
    if flat:
        return phase
    return (wavelength / (_FOUR_PI * dists)) * phase


def _np_matched_gains(weights: np.ndarray, dists: np.ndarray, wavelength: float) -> np.ndarray:
    # gains[c] = sum_m weights[m] * exp(-j*2pi/wl * dists[m, c])
    return weights @ np.exp((-2j * np.pi / wavelength) * dists)


# ---------------------------------------------------------------------------
# numba path

if _HAS_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _nb_pairwise_dists(a, b):
        n = a.shape[0]
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                out[i, j] = np.sqrt(dx * dx + dy * dy + dz * dz)
        return out

    @njit(cache=True)
    def _nb_spherical_entries(dists, wavelength, flat):
        k = 2.0 * np.pi / wavelength
        flat_d = dists.ravel()
        out = np.empty(flat_d.shape[0], dtype=np.complex128)
        for i in range(flat_d.shape[0]):
            d = flat_d[i]
            ph = -k * d
            c = np.cos(ph)
            s = np.sin(ph)
            if flat:
                out[i] = complex(c, s)
            else:
                amp = wavelength / (_FOUR_PI * d)
                out[i] = complex(amp * c, amp * s)
        return out.reshape(dists.shape)

    @njit(cache=True)
    def _nb_matched_gains(weights, dists, wavelength):
        k = 2.0 * np.pi / wavelength
        m, c = dists.shape
        out = np.empty(c, dtype=np.complex128)
        for j in range(c):
            acc = 0.0 + 0.0j
            for i in range(m):
                ph = -k * dists[i, j]
                acc += weights[i] * complex(np.cos(ph), np.sin(ph))
            out[j] = acc
        return out


# ---------------------------------------------------------------------------
# public dispatch


def pairwise_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance table between two point sets.

    Args:
        a: (n, 3) points.
        b: (m, 3) points.

    Returns:
        (n, m) distances in the same units as the inputs.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _HAS_NUMBA:
        return _nb_pairwise_dists(a, b)
    return _np_pairwise_dists(a, b)


def spherical_entries(dists: np.ndarray, wavelength: float, flat: bool = False) -> np.ndarray:
    """Spherical-wave entries amp * exp(-j*2pi*d/wavelength) for a distance table.

    ``flat=True`` drops the free-space amplitude wavelength/(4*pi*d) and keeps
    unit magnitude (used by oracle configurations with the path-loss taper
    disabled).
    """
    dists = np.ascontiguousarray(dists, dtype=np.float64)
    if _HAS_NUMBA:
        return _nb_spherical_entries(dists, float(wavelength), bool(flat))
    return _np_spherical_entries(dists, float(wavelength), bool(flat))


def matched_gains(weights: np.ndarray, dists: np.ndarray, wavelength: float) -> np.ndarray:
    """Per-codeword cascade reduction sum_m w[m]*exp(-j*2pi*d[m,c]/wavelength).

    ``weights`` is the (m,) element weighting (conjugated receive channel
    times incident magnitude), ``dists`` the (m, c) focal-distance table for
    the c codewords being matched.
    """
    weights = np.ascontiguousarray(weights, dtype=np.complex128)
    dists = np.ascontiguousarray(dists, dtype=np.float64)
    if _HAS_NUMBA:
        return _nb_matched_gains(weights, dists, float(wavelength))
    return _np_matched_gains(weights, dists, wavelength)
