"""Experiment orchestration: dataset -> training -> per-figure metric CSVs.

Each experiment emits ``report_<name>.csv`` (stable schema, version-tagged
header comment) plus ``manifest.json`` tying every row to the config digest
and seed. Monte-Carlo experiments seed each trial independently from the
run seed, so results are byte-identical regardless of worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .beamscan import (
    Dataset,
    ScanContext,
    bs_precoder_toward_ris,
    focal_depth_3db,
    gen_channels,
    generate_dataset,
    half_scan_map,
    interference_power,
    noiseless_scan_powers,
    scan_gains,
)
from .channel import NoiseModel, SimConfig, ris_focus_phases
from .codebook import build_fine_codebook, codebook_to_ris_frame, steering_vector
from .config import RunConfig
from .geometry import PolarCoord, to_ris_frame
from .nn.model import ModelConfig, PositionNet, Stage1Net
from .training import (
    CellMapper,
    TrainingConfig,
    beam_accuracy,
    pipeline_accuracy,
    split_dataset,
    stage1_accuracy,
    train,
)

REPORT_SCHEMA = "v1"


def worker_count() -> int:
    cap = os.environ.get("NEARFOCUS_THREADS")
    cores = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(cores, int(cap)))
        except ValueError:
            raise ValueError(f"NEARFOCUS_THREADS={cap!r} is not an integer")
    return cores


def derive_seed(base: int, *parts: int) -> int:
    seed = base & 0x7FFFFFFFFFFFFFFF
    for p in parts:
        seed = (seed * 1000003 + p + 1) & 0x7FFFFFFFFFFFFFFF
    return seed


def _log(msg: str) -> None:
    print(f"[nearfocus] {msg}", file=sys.stderr, flush=True)


def write_report(
    out_dir: str | Path,
    name: str,
    columns: Sequence[str],
    rows: Sequence[Sequence],
    rc: RunConfig,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"report_{name}.csv"
    lines = [
        f"# nearfocus-report {REPORT_SCHEMA} experiment={name} "
        f"config={rc.digest()} seed={rc.seed}"
    ]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    manifest = {
        "version": __version__,
        "config_digest": rc.digest(),
        "seed": rc.seed,
        "config": rc.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# dataset + model plumbing


def build_split_dataset(rc: RunConfig, log: bool = True) -> Dataset:
    if log:
        _log(
            f"generating dataset: {rc.data.stage1_count}+{rc.data.stage2_count} "
            f"samples x {len(rc.data.snr_list)} SNRs ({rc.scale} scale)"
        )
    ds = generate_dataset(
        rc.sim, rc.codebook, rc.data.snr_list, rc.counts(),
        base_seed=rc.seed, snap=rc.data.snap,
    )
    return split_dataset(ds, seed=derive_seed(rc.seed, 7))


def fine_mapper(rc: RunConfig) -> CellMapper:
    fine_bs = build_fine_codebook(rc.codebook, rc.sim.bs_geom, rc.sim.wavelength)
    return CellMapper.from_codebook(rc.sim, fine_bs)


@dataclasses.dataclass
class TrainedStack:
    snr_db: float
    stage1: Stage1Net
    stage2: PositionNet
    record1: object
    record2: object


def train_for_snr(
    rc: RunConfig,
    ds: Dataset,
    snr_db: float,
    mapper: CellMapper,
    transform: Optional[Callable] = None,
    tag: str = "",
    log: bool = True,
) -> TrainedStack:
    """Train the stage-1 and stage-2 models for one SNR bucket.

    ``transform`` optionally rewrites each fine sample (half-map variant)
    before training/eval; seeds derive from (run seed, SNR index, stage).
    """
    i_snr = list(rc.data.snr_list).index(snr_db)
    fine = [s for s in ds.samples if s.stage == "fine" and s.snr_db == snr_db]
    coarse = [s for s in ds.samples if s.stage == "coarse" and s.snr_db == snr_db]
    if transform is not None:
        fine = [transform(s) for s in fine]
    f_train = [s for s in fine if s.split == "train"]
    f_val = [s for s in fine if s.split == "val"]
    c_train = [s for s in coarse if s.split == "train"]
    c_val = [s for s in coarse if s.split == "val"]

    model2 = PositionNet(rc.model, seed=derive_seed(rc.seed, i_snr, 2))
    tc2 = dataclasses.replace(rc.train, stage="fine", seed=derive_seed(rc.seed, i_snr, 12))
    if log:
        _log(f"training stage-2 model @ {snr_db:+g} dB {tag}({len(f_train)} samples)")
    rec2 = train(model2, f_train, f_val, tc2, mapper=mapper)

    model1 = Stage1Net(seed=derive_seed(rc.seed, i_snr, 1))
    tc1 = dataclasses.replace(
        rc.train, stage="coarse", seed=derive_seed(rc.seed, i_snr, 11)
    )
    rec1 = train(model1, c_train, c_val, tc1, sim_cfg=rc.sim)
    return TrainedStack(snr_db=snr_db, stage1=model1, stage2=model2, record1=rec1, record2=rec2)


# ---------------------------------------------------------------------------
# experiments


def run_accuracy(rc: RunConfig, out_dir: str | Path, ds: Optional[Dataset] = None):
    """Per-SNR beam accuracy (stage 2, stage 1, and the full pipeline)."""
    if ds is None:
        ds = build_split_dataset(rc)
    mapper = fine_mapper(rc)
    rows = []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for snr in rc.data.snr_list:
        stack = train_for_snr(rc, ds, snr, mapper)
        fine_test = [s for s in ds.samples if s.stage == "fine" and s.snr_db == snr and s.split == "test"]
        coarse_test = [s for s in ds.samples if s.stage == "coarse" and s.snr_db == snr and s.split == "test"]
        acc2 = beam_accuracy(fine_test, stack.stage2, mapper)
        acc1 = stage1_accuracy(coarse_test, stack.stage1, rc.sim)
        acc_pipe = pipeline_accuracy(fine_test, stack.stage1, stack.stage2, mapper, rc.sim)
        rows.append([snr, acc1, acc2, acc_pipe, len(fine_test)])
        tag = f"snr{snr:+g}"
        stack.stage2.save_weights(out / f"stage2_{tag}.nfwt")
        stack.stage1.save_weights(out / f"stage1_{tag}.nfwt")
        (out / f"train_record_stage2_{tag}.csv").write_text(stack.record2.to_csv())
        (out / f"train_record_stage1_{tag}.csv").write_text(stack.record1.to_csv())
        _log(f"accuracy @ {snr:+g} dB: stage1={acc1:.3f} stage2={acc2:.3f} pipeline={acc_pipe:.3f}")
    write_report(
        out_dir,
        "accuracy",
        ["snr_db", "stage1_accuracy", "stage2_accuracy", "pipeline_accuracy", "n_test"],
        rows,
        rc,
    )
    return rows


def run_halfmap(rc: RunConfig, out_dir: str | Path, ds: Optional[Dataset] = None):
    """Full-map vs half-map stage-2 accuracy under identical seeds/budget."""
    if ds is None:
        ds = build_split_dataset(rc)
    mapper = fine_mapper(rc)

    def halve(s):
        return dataclasses.replace(s, map=half_scan_map(s.map))

    rows = []
    for snr in rc.data.snr_list:
        stack_full = train_for_snr(rc, ds, snr, mapper, tag="[full] ")
        stack_half = train_for_snr(rc, ds, snr, mapper, transform=halve, tag="[half] ")
        fine_test = [s for s in ds.samples if s.stage == "fine" and s.snr_db == snr and s.split == "test"]
        half_test = [halve(s) for s in fine_test]
        acc_full = beam_accuracy(fine_test, stack_full.stage2, mapper)
        acc_half = beam_accuracy(half_test, stack_half.stage2, mapper)
        rows.append([snr, acc_full, acc_half, len(fine_test)])
        _log(f"halfmap @ {snr:+g} dB: full={acc_full:.3f} half={acc_half:.3f}")
    write_report(
        out_dir, "halfmap", ["snr_db", "full_accuracy", "half_accuracy", "n_test"], rows, rc
    )
    return rows


def focal_sweep(r_focal: float, lo: float, hi: float, points: int = 6000) -> np.ndarray:
    return np.linspace(lo, hi, points)


def run_focal(rc: RunConfig, out_dir: str | Path):
    """3 dB focal depth: direct vs cascaded at 0.3 d, plus the aperture sweep."""
    sim = rc.sim
    d = sim.bs_rayleigh_m
    probe_r = 0.3 * d
    focal = PolarCoord(probe_r, 0.0)
    sweep = focal_sweep(probe_r, 0.25 * probe_r, 5.0 * probe_r)
    rows = []
    for link in ("direct", "cascaded"):
        depth, profile = focal_depth_3db(sim, focal, link, sweep)
        rows.append([link, sim.n_bs, probe_r, depth, float(profile.max())])
        _log(f"focal depth {link} @ {probe_r:.3f} m: {depth:.4f} m")
    # aperture sweep at a fixed focal inside every array's near field
    wl = sim.wavelength
    d16 = 2.0 * (15 * wl / 2.0) ** 2 / wl
    focal_small = PolarCoord(0.3 * d16, 0.0)
    for n in (16, 64, 256):
        cfg_n = dataclasses.replace(sim, n_bs=n)
        sweep_n = focal_sweep(focal_small.r, 0.25 * focal_small.r, 12.0 * focal_small.r)
        depth, _ = focal_depth_3db(cfg_n, focal_small, "direct", sweep_n)
        rows.append(["direct", n, focal_small.r, depth, float("nan")])
        _log(f"focal depth direct N={n} @ {focal_small.r:.3f} m: {depth:.4f} m")
    write_report(
        out_dir,
        "focal",
        ["link", "n_bs", "probe_r_m", "focal_depth_m", "peak_power_w"],
        rows,
        rc,
    )
    return rows


def default_victims(sim: SimConfig) -> list[PolarCoord]:
    """The three reference victims, radii scaled with the Rayleigh distance."""
    d_paper = 162.0  # radii below are quoted against the full-scale scenario
    scale = sim.bs_rayleigh_m / (2.0 * (255 * sim.wavelength / 2.0) ** 2 / sim.wavelength)
    return [
        PolarCoord(5.0 * scale, -math.pi / 6),
        PolarCoord(15.0 * scale, math.pi / 6),
        PolarCoord(25.0 * scale, math.pi / 8),
    ]


def calibrated_sigma(rc: RunConfig, snr_db: float, link: str) -> float:
    """Per-mode noise floor from a deterministic serving channel.

    Uses the LoS-only unit-gain channel of a device at the default serving
    spot so every trial of a condition shares one physically fixed sigma^2.
    """
    sim = rc.sim
    serving = PolarCoord(0.3 * sim.bs_rayleigh_m, 0.0)
    det = sim.deterministic()
    rng = np.random.default_rng(0)
    ch = gen_channels(det, serving, det.ris, rng)
    wl = sim.wavelength
    fine_bs = build_fine_codebook(rc.codebook, sim.bs_geom, wl)
    if link == "direct":
        cb = fine_bs
    else:
        cb = codebook_to_ris_frame(fine_bs, sim.ris, sim.ris_geom, wl)
    powers = noiseless_scan_powers(ch, cb, sim.pt_w)
    p_mean = float(np.mean(powers[cb.valid]))
    return p_mean / (10.0 ** (snr_db / 10.0))


def run_interference(
    rc: RunConfig,
    out_dir: str | Path,
    trials: int = 100,
    victims: Optional[list[PolarCoord]] = None,
):
    """Mean leaked power per victim while serving a fixed focal, both modes."""
    sim = rc.sim
    serving = PolarCoord(0.3 * sim.bs_rayleigh_m, 0.0)
    if victims is None:
        victims = default_victims(sim)
    rows = []
    for snr in rc.data.snr_list:
        for mode, link in (("bs", "direct"), ("ris", "cascaded")):
            sigma = calibrated_sigma(rc, snr, link)
            noise = NoiseModel(snr_db=snr, sigma_sq=sigma, rng_seed=0)

            def one_trial(t: int) -> np.ndarray:
                rng = np.random.default_rng(derive_seed(rc.seed, int(snr * 10) & 0xFFFF, t))
                return interference_power(sim, serving, victims, link, noise, rng)

            with ThreadPoolExecutor(max_workers=worker_count()) as pool:
                results = list(pool.map(one_trial, range(trials)))
            mean_powers = np.mean(np.stack(results), axis=0)
            for vi, (victim, p) in enumerate(zip(victims, mean_powers)):
                rows.append([snr, mode, vi, victim.r, victim.theta, float(p), trials])
            _log(
                f"interference @ {snr:+g} dB {mode}: "
                + " ".join(f"{p:.3e}" for p in mean_powers)
            )
    write_report(
        out_dir,
        "interference",
        ["snr_db", "mode", "victim", "victim_r_m", "victim_theta_rad", "mean_power_w", "trials"],
        rows,
        rc,
    )
    return rows


def run_rate(
    rc: RunConfig,
    out_dir: str | Path,
    trials: int = 100,
    devices: Optional[list[PolarCoord]] = None,
):
    """Achievable rate when each reference device is itself served."""
    sim = rc.sim
    if devices is None:
        devices = default_victims(sim)
    f_bs = bs_precoder_toward_ris(sim)
    rows = []
    for snr in rc.data.snr_list:
        for mode, link in (("bs", "direct"), ("ris", "cascaded")):
            sigma = calibrated_sigma(rc, snr, link)
            for di, dev in enumerate(devices):

                def one_trial(t: int) -> float:
                    rng = np.random.default_rng(
                        derive_seed(rc.seed, int(snr * 10) & 0xFFFF, di * 7919 + t)
                    )
                    ch = gen_channels(sim, dev, sim.ris, rng)
                    if link == "direct":
                        f = steering_vector(sim.bs_geom, dev, sim.wavelength)
                        g = complex(np.conj(ch.h_bu) @ f)
                    else:
                        phi = ris_focus_phases(ch, f_bs, to_ris_frame(dev, sim.ris))
                        g = complex(np.conj(ch.h_re) @ (phi.diag_phasors * (ch.h_br @ f_bs)))
                    p = sim.pt_w * abs(g) ** 2
                    return math.log2(1.0 + p / sigma)

                with ThreadPoolExecutor(max_workers=worker_count()) as pool:
                    rates = list(pool.map(one_trial, range(trials)))
                rows.append([snr, mode, di, dev.r, float(np.mean(rates)), trials])
            _log(f"rate @ {snr:+g} dB {mode}: done")
    write_report(
        out_dir,
        "rate",
        ["snr_db", "mode", "device", "device_r_m", "mean_rate_bps_hz", "trials"],
        rows,
        rc,
    )
    return rows


def run_density(
    rc: RunConfig,
    out_dir: str | Path,
    counts: Sequence[int] = (10, 20, 30, 40, 50),
    trials: int = 50,
    snr_db: float = 0.0,
):
    """Aggregate interference vs device count; victim sets nest per trial so
    medians are exactly monotone in the count."""
    sim = rc.sim
    serving = PolarCoord(0.3 * sim.bs_rayleigh_m, 0.0)
    max_victims = max(counts) - 1
    rows = []
    for mode, link in (("bs", "direct"), ("ris", "cascaded")):
        sigma = calibrated_sigma(rc, snr_db, link)
        noise = NoiseModel(snr_db=snr_db, sigma_sq=sigma, rng_seed=0)

        def one_trial(t: int) -> np.ndarray:
            pos_rng = np.random.default_rng(derive_seed(rc.seed, 555, t))
            victims = [
                PolarCoord(
                    pos_rng.uniform(sim.r_min, sim.r_max),
                    pos_rng.uniform(sim.theta_min, sim.theta_max),
                )
                for _ in range(max_victims)
            ]
            rng = np.random.default_rng(derive_seed(rc.seed, 556, t))
            return interference_power(sim, serving, victims, link, noise, rng)

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            all_powers = list(pool.map(one_trial, range(trials)))
        stacked = np.stack(all_powers)  # (trials, max_victims)
        for count in counts:
            totals = stacked[:, : count - 1].sum(axis=1)
            q1, med, q3 = np.percentile(totals, [25, 50, 75])
            rows.append([count, mode, float(med), float(q1), float(q3), trials])
            _log(f"density {mode} n={count}: median={med:.3e}")
    write_report(
        out_dir,
        "density",
        ["n_devices", "mode", "median_power_w", "q1_power_w", "q3_power_w", "trials"],
        rows,
        rc,
    )
    return rows


EXPERIMENTS = {
    "accuracy": run_accuracy,
    "halfmap": run_halfmap,
    "focal": run_focal,
    "interference": run_interference,
    "rate": run_rate,
    "density": run_density,
}
