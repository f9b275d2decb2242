"""Benchmark the numba kernels against the pure-numpy fallback.

Run with ``python -m nearfocus.bench``. Times the three hot kernels at a
desk-scale and a full-scale problem size and prints the speedups. Both
paths are imported directly, so the NEARFOCUS_BACKEND flag does not matter
here (numba rows are skipped if numba is unavailable).
"""

from __future__ import annotations

import time

import numpy as np

from . import backend


def _time(fn, *args, repeats: int = 5) -> float:
    fn(*args)  # warm-up (and JIT compile for numba)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases():
    rng = np.random.default_rng(0)
    for label, m, n, cells in (("desk (M=256, N=64, 1024 cells)", 256, 64, 1024),
                               ("paper (M=1024, N=256, 4096 cells)", 1024, 256, 4096)):
        pts_a = rng.random((m, 3)) * 5.0
        pts_b = rng.random((n, 3)) * 5.0 + 10.0
        dists = backend.pairwise_dists(pts_a, pts_b)
        weights = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        cell_d = rng.random((m, cells)) * 50.0 + 1.0
        yield label, pts_a, pts_b, dists, weights, cell_d


def main() -> int:
    wl = 0.005
    print(f"active backend: {backend.active_backend()}")
    header = f"{'kernel':<44}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, pts_a, pts_b, dists, weights, cell_d in _cases():
        rows = [
            (f"pairwise_dists {label}",
             lambda: backend._np_pairwise_dists(pts_a, pts_b),
             (lambda: backend._nb_pairwise_dists(pts_a, pts_b)) if backend._HAS_NUMBA else None),
            (f"spherical_entries {label}",
             lambda: backend._np_spherical_entries(dists, wl, False),
             (lambda: backend._nb_spherical_entries(dists, wl, False)) if backend._HAS_NUMBA else None),
            (f"matched_gains {label}",
             lambda: backend._np_matched_gains(weights, cell_d, wl),
             (lambda: backend._nb_matched_gains(weights, cell_d, wl)) if backend._HAS_NUMBA else None),
        ]
        for name, np_fn, nb_fn in rows:
            t_np = _time(np_fn)
            if nb_fn is None:
                print(f"{name:<44}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'n/a':>10}")
                continue
            t_nb = _time(nb_fn)
            print(f"{name:<44}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
