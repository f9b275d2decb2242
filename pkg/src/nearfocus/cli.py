"""Command-line entry point.

Subcommands: gen-dataset, train, eval, experiment <name>, flops,
codebook-export. Global flags select the scale preset, seed, output
directory, and optional key=value config file plus --set overrides.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_run_config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scale", choices=("desk", "paper"), default="desk",
                        help="parameter preset (default: desk)")
    parser.add_argument("--seed", type=int, default=None, help="base seed (default: 0)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearfocus",
        description="Near-field beamfocusing simulator and beam-training toolkit",
    )
    parser.add_argument("--version", action="version", version=f"nearfocus {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate and save a beam-scan dataset")
    _add_common(p)

    p = sub.add_parser("train", help="train stage-1/stage-2 models from a dataset")
    _add_common(p)
    p.add_argument("--dataset", default=None,
                   help="dataset directory (default: generate in memory)")

    p = sub.add_parser("eval", help="evaluate trained models on a dataset's test split")
    _add_common(p)
    p.add_argument("--weights-dir", required=True, help="directory holding .nfwt files")
    p.add_argument("--dataset", default=None,
                   help="dataset directory (default: regenerate from config)")

    p = sub.add_parser("experiment", help="run one of the reported experiments")
    _add_common(p)
    p.add_argument("kind", choices=("focal", "interference", "rate", "density",
                                    "accuracy", "halfmap"))
    p.add_argument("--no-auto", action="store_true",
                   help="fail instead of auto-generating missing artifacts")
    p.add_argument("--dataset", default=None, help="reuse a saved dataset directory")

    p = sub.add_parser("flops", help="print the per-layer FLOPs table")
    _add_common(p)

    p = sub.add_parser("codebook-export", help="export a codebook manifest + weight blob")
    _add_common(p)
    p.add_argument("--frame", choices=("bs", "ris"), default="bs")
    p.add_argument("--grid", choices=("fine", "coarse"), default="fine")

    return parser


def _run_config(args) -> RunConfig:
    return load_run_config(args.scale, args.seed, args.config, args.overrides)


def cmd_gen_dataset(args) -> int:
    from .beamscan import save_dataset
    from .experiments import build_split_dataset

    rc = _run_config(args)
    ds = build_split_dataset(rc)
    save_dataset(ds, args.out)
    print(f"dataset written to {args.out} ({len(ds.samples)} samples)")
    return 0


def cmd_train(args) -> int:
    from .beamscan import load_dataset
    from .experiments import build_split_dataset, fine_mapper, train_for_snr

    rc = _run_config(args)
    if args.dataset:
        ds = load_dataset(args.dataset)
    else:
        ds = build_split_dataset(rc)
    mapper = fine_mapper(rc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for snr in rc.data.snr_list:
        stack = train_for_snr(rc, ds, snr, mapper)
        tag = f"snr{snr:+g}"
        stack.stage2.save_weights(out / f"stage2_{tag}.nfwt")
        stack.stage1.save_weights(out / f"stage1_{tag}.nfwt")
        (out / f"train_record_stage2_{tag}.csv").write_text(stack.record2.to_csv())
        (out / f"train_record_stage1_{tag}.csv").write_text(stack.record1.to_csv())
    print(f"models written to {out}")
    return 0


def cmd_eval(args) -> int:
    from .beamscan import load_dataset
    from .experiments import build_split_dataset, fine_mapper, write_report
    from .nn.model import PositionNet, Stage1Net
    from .training import beam_accuracy, pipeline_accuracy, stage1_accuracy

    rc = _run_config(args)
    if args.dataset:
        ds = load_dataset(args.dataset)
    else:
        ds = build_split_dataset(rc)
    mapper = fine_mapper(rc)
    wdir = Path(args.weights_dir)
    rows = []
    for snr in rc.data.snr_list:
        tag = f"snr{snr:+g}"
        stage2 = PositionNet(rc.model, seed=0)
        stage2.load_weights(wdir / f"stage2_{tag}.nfwt")
        stage1 = Stage1Net(seed=0)
        stage1.load_weights(wdir / f"stage1_{tag}.nfwt")
        fine_test = [s for s in ds.samples if s.stage == "fine" and s.snr_db == snr and s.split == "test"]
        coarse_test = [s for s in ds.samples if s.stage == "coarse" and s.snr_db == snr and s.split == "test"]
        acc2 = beam_accuracy(fine_test, stage2, mapper)
        acc1 = stage1_accuracy(coarse_test, stage1, rc.sim)
        acc_pipe = pipeline_accuracy(fine_test, stage1, stage2, mapper, rc.sim)
        rows.append([snr, acc1, acc2, acc_pipe, len(fine_test)])
        print(f"snr {snr:+g} dB: stage1={acc1:.3f} stage2={acc2:.3f} pipeline={acc_pipe:.3f}")
    write_report(args.out, "eval", ["snr_db", "stage1_accuracy", "stage2_accuracy",
                                    "pipeline_accuracy", "n_test"], rows, rc)
    return 0


def cmd_experiment(args) -> int:
    from .beamscan import load_dataset
    from .experiments import EXPERIMENTS

    rc = _run_config(args)
    fn = EXPERIMENTS[args.kind]
    kwargs = {}
    if args.kind in ("accuracy", "halfmap"):
        if args.dataset:
            kwargs["ds"] = load_dataset(args.dataset)
        elif args.no_auto:
            print(
                "error: experiment needs a dataset; pass --dataset DIR or drop --no-auto "
                "to generate one from the config",
                file=sys.stderr,
            )
            return 2
    fn(rc, args.out, **kwargs)
    print(f"report written to {Path(args.out) / f'report_{args.kind}.csv'}")
    return 0


def cmd_flops(args) -> int:
    from .experiments import write_report
    from .nn.flops import flops_estimate, format_flops_table

    rc = _run_config(args)
    rows = flops_estimate(rc.model)
    print(format_flops_table(rows))
    write_report(args.out, "flops", ["layer", "flops"], rows, rc)
    return 0


def cmd_codebook_export(args) -> int:
    from .codebook import (
        build_coarse_codebook,
        build_fine_codebook,
        codebook_to_ris_frame,
        export_codebook,
    )

    rc = _run_config(args)
    sim = rc.sim
    if args.grid == "fine":
        cb = build_fine_codebook(rc.codebook, sim.bs_geom, sim.wavelength)
    else:
        cb = build_coarse_codebook(
            sim.bs_geom.aperture, sim.wavelength, sim.theta_max - sim.theta_min, sim.bs_geom
        )
    if args.frame == "ris":
        cb = codebook_to_ris_frame(cb, sim.ris, sim.ris_geom, sim.wavelength)
    export_codebook(cb, args.out)
    print(f"codebook exported to {args.out}")
    return 0


_COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "flops": cmd_flops,
    "codebook-export": cmd_codebook_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
