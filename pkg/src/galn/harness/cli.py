"""Command-line entry point: ``galn {synth,train,eval,pseudo}``.

Exit codes: 0 success, 1 bad usage or configuration, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..geom import LabeledCloud, read_cloud, sample_blocks, write_cloud
from ..losses import LossReport, generate_pseudo_labels
from ..numcore import CheckpointError, load_checkpoint, save_checkpoint
from ..segnet import params_from_arrays
from .config import ConfigError, RunConfig, apply_overrides, load_config, save_config
from .evaluate import evaluate
from .synth import SHIFTS, synth_domain_pair
from .train import TrainingDiverged, train

log = logging.getLogger("galn")

CHECKPOINT_NAME = "model.galn"
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="galn", description="Graph-aligned point cloud domain adaptation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic source/target pair of cloud files")
    _common(p)
    p.add_argument("--shift", choices=SHIFTS, default="density_drop")
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--points", type=int, default=4000)

    p = sub.add_parser("train", help="train one stage and write a checkpoint and logs")
    _common(p)
    p.add_argument("--stage", default=None, help="source_only, adapt or pseudo_label")
    p.add_argument("--source", type=Path, required=True, help="labeled cloud file or directory")
    p.add_argument("--target", type=Path, default=None, help="cloud file or directory (labels ignored)")
    p.add_argument("--init", type=Path, default=None, help="checkpoint or train directory to start from")
    p.add_argument("--eval", type=Path, action="append", default=[], metavar="DIR",
                   help="labeled clouds scored after every epoch, repeatable")

    p = sub.add_parser("eval", help="score a checkpoint on labeled clouds, print JSON")
    _common(p)
    p.add_argument("checkpoint", type=Path, help="checkpoint file or train directory")
    p.add_argument("clouds", type=Path, nargs="+", help="labeled cloud files or directories")

    p = sub.add_parser("pseudo", help="write pseudo-labeled copies of target clouds")
    _common(p)
    p.add_argument("checkpoint", type=Path, help="checkpoint file or train directory")
    p.add_argument("clouds", type=Path, nargs="+", help="cloud files or directories")
    return parser


def _cloud_paths(paths) -> list[Path]:
    out = []
    for p in paths:
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix == ".txt"))
        elif p.exists():
            out.append(p)
        else:
            raise ConfigError(f"no such file or directory: {p}")
    if not out:
        raise ConfigError(f"no cloud files found in {', '.join(map(str, paths))}")
    return out


def _read_clouds(paths) -> list[LabeledCloud]:
    try:
        return [read_cloud(p) for p in _cloud_paths(paths)]
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _config(args, **extra) -> RunConfig:
    cfg = RunConfig()
    ckpt_dir = getattr(args, "checkpoint", None) or getattr(args, "init", None)
    if ckpt_dir is not None and ckpt_dir.is_dir() and (ckpt_dir / CONFIG_NAME).exists():
        cfg = load_config(ckpt_dir / CONFIG_NAME)
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = load_config(args.config, cfg)
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v
    pairs.update({k: str(v) for k, v in extra.items() if v is not None})
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return apply_overrides(cfg, pairs)


def _load_params(path: Path, cfg: RunConfig):
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    try:
        arrays = load_checkpoint(path)
        return params_from_arrays(arrays, coord_scale=cfg.coord_scale)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except (CheckpointError, KeyError, ValueError) as exc:
        raise ConfigError(f"unreadable checkpoint {path}: {exc}") from exc


def _out_dir(args, default: str) -> Path:
    out = args.out if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.scenes < 1:
        raise ConfigError("--scenes must be at least 1")
    source, target = synth_domain_pair(args.scenes, args.shift, seed, n_points=args.points)
    out = _out_dir(args, "synth")
    for name, clouds in (("source", source), ("target", target)):
        (out / name).mkdir(exist_ok=True)
        for i, cloud in enumerate(clouds):
            write_cloud(out / name / f"scene_{i:03d}.txt", cloud)
    print(f"wrote {len(source)} source and {len(target)} target clouds to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, stage=args.stage)
    source = _read_clouds([args.source])
    missing = [i for i, c in enumerate(source) if c.labels is None]
    if missing:
        raise ConfigError(f"source clouds need labels; {len(missing)} file(s) have none")
    target = _read_clouds([args.target]) if args.target is not None else []
    init = _load_params(args.init, cfg) if args.init is not None else None
    eval_sets = {p.name or str(p): _read_clouds([p]) for p in args.eval}
    out = _out_dir(args, f"run_{cfg.stage}")
    ckpt = out / CHECKPOINT_NAME
    if args.init is not None:
        src_ckpt = args.init / CHECKPOINT_NAME if args.init.is_dir() else args.init
        if src_ckpt.resolve() == ckpt.resolve():
            raise ConfigError("--out would overwrite the --init checkpoint; choose another directory")

    save_config(out / CONFIG_NAME, cfg)
    with open(out / "losses.csv", "w") as fh:
        fh.write(LossReport.CSV_HEADER + "\n")

        def on_step(step, report):
            fh.write(report.csv_row(step) + "\n")

        result = train(cfg, source, target, init=init, eval_sets=eval_sets, on_step=on_step)
    save_checkpoint(ckpt, result.params.tensors)
    with open(out / "epochs.jsonl", "w") as fh:
        for entry in result.epochs:
            fh.write(json.dumps(entry) + "\n")
    last = result.epochs[-1] if result.epochs else {}
    print(f"{cfg.stage}: {len(result.losses)} steps, final {json.dumps(last)}; wrote {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    params = _load_params(args.checkpoint, cfg)
    clouds = _read_clouds(args.clouds)
    if any(c.labels is None for c in clouds):
        raise ConfigError("eval needs labeled clouds")
    report = evaluate(params, clouds, cfg)
    text = report.to_json()
    if args.out is not None:
        out = _out_dir(args, "")
        (out / "eval.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_pseudo(args) -> int:
    cfg = _config(args)
    params = _load_params(args.checkpoint, cfg)
    paths = _cloud_paths(args.clouds)
    clouds = [read_cloud(p).unlabeled() for p in paths]
    # covering blocks so every point is scored; selection is pooled over all files
    per_cloud = [sample_blocks(c, cfg.block_xy, cfg.points_per_block, cfg.seed * 7919 + i, cover_all=True)
                 for i, c in enumerate(clouds)]
    pls = generate_pseudo_labels(params, [b for bs in per_cloud for b in bs], cfg.keep_fraction)
    out = _out_dir(args, "pseudo")
    pos = 0
    for path, cloud, blocks in zip(paths, clouds, per_cloud):
        labels = np.full(len(cloud), -1, dtype=np.int64)
        conf = np.zeros(len(cloud))
        for block, pl in zip(blocks, pls[pos:pos + len(blocks)]):
            labels[block.source_indices] = np.where(pl.mask, pl.labels, -1)
            conf[block.source_indices] = pl.confidence
        pos += len(blocks)
        write_pseudo(out / path.name, cloud, labels, conf)
    print(f"wrote {len(paths)} pseudo-label files to {out}")
    return 0


def write_pseudo(path, cloud: LabeledCloud, labels: np.ndarray, confidence: np.ndarray) -> None:
    """Rows ``x y z label confidence``; label -1 marks rejected or unsampled points."""
    with open(path, "w") as fh:
        fh.write(f"#domain {cloud.domain_tag} #classes {cloud.num_classes}\n")
        for p, lab, c in zip(cloud.points, labels, confidence):
            fh.write(" ".join(repr(float(v)) for v in p) + f" {int(lab)} {float(c)!r}\n")


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "pseudo": cmd_pseudo}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"galn {args.command}: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"galn {args.command}: aborted: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"galn {args.command}: aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
