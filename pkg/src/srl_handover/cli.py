"""Command-line interface: ``handover <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig, load_run_config
from .dataio import ACTIVITIES, HandoverState, choose_test_pairs, participant_split, read_corpus, synth_corpus, write_corpus
from .dataio.synth import sub_seed
from .training import TrainingError, write_log_csv

logger = logging.getLogger("srl_handover")

MODELS = ("svae", "rot", "timing")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--output-dir", help="output root (default: config output_dir, $HANDOVER_HOME, ./handover_runs)")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="handover", description="Handover models for hip-mounted robotic limbs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", parents=[common], help="generate a synthetic annotated corpus")
    p.add_argument("--out", help="corpus directory (default <output>/corpus)")
    p.add_argument("--n-pairs", type=int, help="participant pairs")
    p.add_argument("--clips-per-pair", type=int, help="clips per pair")

    p = sub.add_parser("train", parents=[common], help="train a model on the training split")
    p.add_argument("model", choices=MODELS)
    p.add_argument("--corpus", help="corpus directory or manifest")
    p.add_argument("--epochs", type=int, help="epochs (svae: stage 1)")
    p.add_argument("--stage2-epochs", type=int, help="svae stage-2 epochs")
    p.add_argument("--checkpoint", help="checkpoint path (default <output>/checkpoints/<model>.zip)")

    p = sub.add_parser("eval", parents=[common], help="per-activity evaluation report")
    p.add_argument("model", choices=MODELS)
    p.add_argument("--checkpoint", help="checkpoint path (default <output>/checkpoints/<model>.zip)")
    p.add_argument("--corpus", help="corpus directory or manifest")
    p.add_argument("--split", choices=("test", "train", "all"), default="test", help="clips to evaluate")
    p.add_argument("--out", help="report CSV (default <output>/reports/<model>_eval.csv)")

    p = sub.add_parser("importance", parents=[common], help="gradient-based joint importance ranking")
    p.add_argument("model", choices=MODELS)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--corpus", help="corpus directory or manifest")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--max-samples", type=int, default=2000, help="windows sampled for the gradients")
    p.add_argument("--out", help="importance CSV (default <output>/reports/<model>_importance.csv)")

    p = sub.add_parser("simulate", parents=[common], help="closed-loop handover episodes")
    p.add_argument("--scenario", help="JSON scenario file: controller, activity, seed, ticks, kind")
    p.add_argument("--controller", choices=("baseline", "3hands", "both"))
    p.add_argument("--activity", choices=ACTIVITIES)
    p.add_argument("--kind", choices=("HandingOver", "TakingBack"))
    p.add_argument("--ticks", type=int, help="maximum ticks per episode")
    p.add_argument("--svae-checkpoint", help="SVAE checkpoint for the 3hands controller")
    p.add_argument("--timing-checkpoint", help="timing checkpoint for the 3hands controller")
    p.add_argument("--out", help="episode directory (default <output>/episodes)")

    p = sub.add_parser("stats", parents=[common], help="handover duration and location statistics")
    p.add_argument("--corpus", help="corpus directory or manifest")
    p.add_argument("--out", help="output directory (default <output>/stats)")
    p.add_argument("--no-svg", action="store_true", help="skip the scatter plot")
    return parser


# --------------------------------------------------------------------------
# helpers


def _config(args) -> tuple[RunConfig, Path]:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
        for name in MODELS:  # re-derive module seeds from the new root
            if isinstance(raw.get(name), dict):
                raw[name].pop("seed", None)
    cfg = load_run_config(raw)
    return cfg, cfg.output_root(args.output_dir)


def _corpus_path(args, cfg: RunConfig, root: Path) -> Path:
    return Path(getattr(args, "corpus", None) or cfg.data.corpus or root / "corpus")


def _load_corpus(args, cfg, root):
    path = _corpus_path(args, cfg, root)
    if not path.exists():
        raise FileNotFoundError(f"no corpus at {path}; run 'handover synth-data' first")
    return read_corpus(path)


def _split(corpus, cfg: RunConfig):
    pairs = cfg.data.test_pairs or choose_test_pairs(corpus, cfg.data.n_test_pairs, sub_seed(cfg.seed, "split") % 2**32)
    return participant_split(corpus, pairs), pairs


def _select(corpus, cfg, split: str):
    (train, test), _ = _split(corpus, cfg)
    return {"train": train, "test": test, "all": list(corpus)}[split]


def _checkpoint(args, root: Path, model: str) -> Path:
    return Path(args.checkpoint or root / "checkpoints" / f"{model}.zip")


def _write_rows(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _progress(verbose: bool):
    if not verbose:
        return None

    def report(stage, row):
        logger.info("%s epoch %d lr %.3g recon %.6g kl %.4g", stage, row["epoch"], row["lr"], row["recon"], row["kl"])

    return report


def tree_hash(path) -> str:
    """SHA-256 over relative paths and contents of every file below ``path``."""
    h = hashlib.sha256()
    root = Path(path)
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# commands


def cmd_synth_data(args, cfg: RunConfig, root: Path) -> int:
    synth = cfg.data.synth
    if args.n_pairs is not None:
        synth.n_pairs = args.n_pairs
    if args.clips_per_pair is not None:
        synth.clips_per_pair = args.clips_per_pair
    synth.validate()
    out = Path(args.out or cfg.data.corpus or root / "corpus")
    corpus = synth_corpus(synth, seed=sub_seed(cfg.seed, "data") % 2**32)
    write_corpus(corpus, out)
    n_seg = sum(int(np.sum(np.diff(np.r_[0, c.states != HandoverState.IDLE].astype(int)) == 1)) for c in corpus)
    print(f"wrote {len(corpus)} clips ({n_seg} handover segments, "
          f"{len({c.pair_id for c in corpus})} pairs) to {out}")
    return 0


def cmd_train(args, cfg: RunConfig, root: Path) -> int:
    from . import rot, svae, timing

    torch.set_num_threads(1)
    corpus = _load_corpus(args, cfg, root)
    (train, _), pairs = _split(corpus, cfg)
    ckpt = _checkpoint(args, root, args.model)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    logs = root / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    progress = _progress(args.verbose)
    if args.model == "svae":
        scfg = cfg.svae
        model, log1 = svae.train_stage1(train, scfg, epochs=args.epochs, progress=progress)
        model, log2 = svae.train_stage2(model, train, scfg, epochs=args.stage2_epochs, progress=progress)
        write_log_csv(log1, logs / "svae_stage1_log.csv")
        write_log_csv(log2, logs / "svae_stage2_log.csv")
        svae.save_svae(model, ckpt, [dict(r, stage=1) for r in log1] + [dict(r, stage=2) for r in log2])
        final = (log2 or log1)[-1] if (log1 or log2) else None
    elif args.model == "rot":
        model, log = rot.train_rot(train, cfg.rot, epochs=args.epochs, progress=progress)
        write_log_csv(log, logs / "rot_log.csv")
        rot.save_rot(model, ckpt, log)
        final = log[-1] if log else None
    else:
        model, log = timing.train_timing(train, cfg.timing, epochs=args.epochs, progress=progress)
        write_log_csv(log, logs / "timing_log.csv")
        timing.save_timing(model, cfg.timing, ckpt, log)
        final = log[-1] if log else None
    print(f"trained {args.model} on {len(train)} clips (held-out pairs: {', '.join(pairs)})")
    if final is not None:
        print(f"final loss: {final['recon']!r}")
    print(f"checkpoint: {ckpt}")
    return 0


def _load_model(kind: str, path: Path):
    from . import rot, svae, timing

    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    if kind == "svae":
        return svae.load_svae(path)[0]
    if kind == "rot":
        return rot.load_rot(path)[0]
    return timing.load_timing(path)[0]


def _check_width(model, kind: str, clips) -> None:
    width = 9 * len(clips[0].skeleton)
    expected = model.frame_dim if kind == "timing" else model.h_dim
    if width != expected:
        raise ValueError(f"checkpoint expects {expected} features per frame; corpus skeleton gives {width}")


def cmd_eval(args, cfg: RunConfig, root: Path) -> int:
    from . import rot, svae, timing

    torch.set_num_threads(1)
    clips = _select(_load_corpus(args, cfg, root), cfg, args.split)
    model = _load_model(args.model, _checkpoint(args, root, args.model))
    _check_width(model, args.model, clips)
    if args.model == "svae":
        rows = svae.evaluate(model, clips)
    elif args.model == "rot":
        rows = rot.evaluate(model, clips)
    else:
        rows = timing.accuracy_report(model, clips)
    out = Path(args.out or root / "reports" / f"{args.model}_eval.csv")
    _write_rows(rows, out)
    last = rows[-1]
    print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in last.items()))
    print(f"report: {out}")
    return 0


def cmd_importance(args, cfg: RunConfig, root: Path) -> int:
    from . import analysis

    torch.set_num_threads(1)
    clips = _select(_load_corpus(args, cfg, root), cfg, args.split)
    model = _load_model(args.model, _checkpoint(args, root, args.model))
    _check_width(model, args.model, clips)
    fn = {"svae": analysis.svae_importance, "rot": analysis.rot_importance,
          "timing": analysis.timing_importance}[args.model]
    table = fn(model, clips, args.max_samples)
    out = Path(args.out or root / "reports" / f"{args.model}_importance.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    for channel in analysis.CHANNELS:
        print(f"{channel}: " + ", ".join(table.top(channel, 5)))
    print(f"table: {out}")
    return 0


def cmd_simulate(args, cfg: RunConfig, root: Path) -> int:
    from . import controller as ctl

    torch.set_num_threads(1)
    scenario = {"controller": "baseline", "activity": "Hammer a nail", "seed": 0, "ticks": 250,
                "kind": "HandingOver"}
    if args.scenario:
        data = json.loads(Path(args.scenario).read_text())
        unknown = set(data) - set(scenario) - {"svae_checkpoint", "timing_checkpoint"}
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        scenario.update(data)
    for key in ("controller", "activity", "ticks", "kind"):
        if getattr(args, key) is not None:
            scenario[key] = getattr(args, key)
    if args.seed is not None:
        scenario["seed"] = args.seed
    script = ctl.scripted_user(scenario["activity"], int(scenario["seed"]),
                               kind=HandoverState.parse(scenario["kind"]), config=cfg.data.synth)
    which = ("baseline", "3hands") if scenario["controller"] == "both" else (scenario["controller"],)
    out = Path(args.out or root / "episodes")
    for name in which:
        if name == "baseline":
            controller = ctl.BaselineController(cfg.controller)
        else:
            svae_path = Path(args.svae_checkpoint or scenario.get("svae_checkpoint") or root / "checkpoints" / "svae.zip")
            timing_path = Path(args.timing_checkpoint or scenario.get("timing_checkpoint")
                               or root / "checkpoints" / "timing.zip")
            controller = ctl.HandsController(_load_model("timing", timing_path), _load_model("svae", svae_path),
                                             cfg.controller, cfg.timing.threshold)
        log = ctl.run_episode(controller, script, int(scenario["ticks"]))
        ctl.write_episode(log, name, f"{script.name}", out, cfg.controller.tick_rate)
        o = log.outcome()
        print(f"{name}: completed={o['completed']} tick={o['completion_tick']} "
              f"path={o['path_length']:.3f} m jerk={o['mean_jerk']:.3f} m/s^3 final={o['final_distance']:.3f} m")
    print(f"episodes: {out}")
    return 0


def cmd_stats(args, cfg: RunConfig, root: Path) -> int:
    from . import analysis

    corpus = _load_corpus(args, cfg, root)
    stats = analysis.handover_stats(corpus)
    out = Path(args.out or root / "stats")
    analysis.write_stats(stats, out, svg=not args.no_svg)
    print(f"{stats['n_segments']} segments, duration {stats['duration_mean']:.3f} +/- {stats['duration_std']:.3f} s")
    print(f"stats: {out}")
    return 0


COMMANDS = {"synth-data": cmd_synth_data, "train": cmd_train, "eval": cmd_eval, "importance": cmd_importance,
            "simulate": cmd_simulate, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, root = _config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"handover: invalid config: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, cfg, root)
    except TrainingError as exc:
        print(f"handover: training aborted: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, LookupError) as exc:
        print(f"handover: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
