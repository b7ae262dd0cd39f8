"""Command-line entry point: ``imumixer {synth,train,eval,count,stream}``.

Every subcommand accepts ``--config FILE`` (see :mod:`imumixer.config`);
flags given on the command line override values from the file. Each run
writes a ``manifest.json`` (or ``<file>.manifest.json`` for single-file
outputs) recording the resolved configuration, seed, package versions and
SHA-256 digests of the inputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, model_from_spec
from .data import (
    USER_DEPENDENT,
    USER_INDEPENDENT,
    ingest,
    normalize_all,
    stack_windows,
    synth_generate,
    write_folds,
    write_segments,
)
from .errors import CheckpointError, ConfigError, ImuMixerError, UsageError
from .evaluate import make_folds, run_protocol, write_report
from .model import MixerModel, count_flops, count_params, variant_names
from .optim import train, write_loss_csv
from .reminder import ReminderEngine, load_trace, write_decisions

log = logging.getLogger("imumixer")

MANIFEST_VERSION = 1
PROTOCOL_FLAGS = {"user-dependent": USER_DEPENDENT, "user-independent": USER_INDEPENDENT}


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed, inputs: dict) -> None:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "imumixer": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {str(k): _digest(v) for k, v in inputs.items()},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "model", None):
        cfg.model, cfg.model_name = model_from_spec(args.model)
    sched = cfg.schedule
    for flag, key in (("epochs", "max_epochs"), ("batch_size", "batch_size"), ("lr", "initial_lr"),
                      ("patience", "patience"), ("weight_decay", "weight_decay")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(sched, key, value)
    sched.__post_init__()
    for key in ("seed", "data", "out", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _require_data(cfg: RunConfig) -> Path:
    if not cfg.data:
        raise UsageError("no data file given (use --data or the config's 'data' key)")
    p = Path(cfg.data)
    if not p.is_file():
        raise UsageError(f"data file not found: {p}")
    return p


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise UsageError("no output directory given (use --out or the config's 'out' key)")
    return Path(cfg.out)


def cmd_synth(args) -> int:
    out = Path(args.out)
    segments = synth_generate(args.subjects, args.per_class, args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_segments(segments, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "synth",
                   {"subjects": args.subjects, "per_class": args.per_class}, args.seed, {})
    print(f"wrote {len(segments)} segments to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    data = _require_data(cfg)
    out = _require_out(cfg)
    segments, stats = ingest(data)
    normalized = normalize_all(segments)
    if not normalized:
        raise UsageError(f"{data}: no segments survive length normalization")
    windows, labels = stack_windows(normalized)
    model = MixerModel(cfg.model, rng=cfg.seed)
    result = train(model, windows, labels, cfg.schedule, seed=cfg.seed,
                   progress=lambda e, lr, loss: log.info("epoch %d lr %g loss %.6f", e, lr, loss))
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(result.history, out / "loss_history.csv")
    (out / "ingest_stats.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), cfg.seed, {"data": data})
    acc = float(np.mean(model.predict(windows) == labels))
    print(f"trained {len(result.history)} epochs; final loss {result.history[-1][2]:.6f}; "
          f"training accuracy {acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    data = _require_data(cfg)
    out = _require_out(cfg)
    protocol = PROTOCOL_FLAGS[args.protocol]
    segments, _ = ingest(data)
    normalized = normalize_all(segments)
    folds = make_folds(normalized, protocol)
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    write_folds(folds, out / "folds.json")
    report = run_protocol(cfg.model, normalized, protocol, cfg.schedule, base_seed=cfg.seed,
                          jobs=cfg.jobs, model_dir=out / "models")
    write_report(report, out)
    write_manifest(out / "manifest.json", "eval", dict(cfg.to_dict(), protocol=protocol), cfg.seed,
                   {"data": data})
    print(f"{protocol}: {len(report.folds)} folds, accuracy {report.overall_accuracy:.4f}, "
          f"reminder {report.reminder_rate}, silence {report.silence_rate}")
    return 0


def cmd_count(args) -> int:
    cfg = _resolve(args)
    params, flops = count_params(cfg.model), count_flops(cfg.model)
    if args.json:
        print(json.dumps({"model": cfg.model_name, "params": params, "flops": flops}))
    else:
        name = cfg.model_name or "custom"
        print(f"{name}: params {params} ({params / 1e6:.2f} M), flops {flops} ({flops / 1e6:.2f} M)")
    return 0


def cmd_stream(args) -> int:
    cfg = load_config(args.config)
    settings = cfg.stream
    for flag in ("stride", "silence_window", "cooldown"):
        if getattr(args, flag) is not None:
            setattr(settings, flag, getattr(args, flag))
    ckpt, trace_path, out = Path(args.model), Path(args.trace), Path(args.out)
    for p in (ckpt, trace_path):
        if not p.is_file():
            raise UsageError(f"file not found: {p}")
    model = load_checkpoint(ckpt)
    trace, start_time, rate = load_trace(trace_path)
    engine = ReminderEngine(model, settings.stride, settings.silence_window, settings.cooldown, rate)
    rows = engine.run(trace, start_time)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_decisions(rows, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "stream", vars(settings).copy(), None,
                   {"model": ckpt, "trace": trace_path})
    notes = sum(r.decision == "notify" for r in rows)
    print(f"{len(rows)} windows, {notes} notification(s) -> {out}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--model", help=f"variant name ({', '.join(variant_names())})")
    if data:
        p.add_argument("--data", help="JSON-lines segment file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int, help="maximum epochs (default 400)")
        p.add_argument("--batch-size", type=int, help="minibatch size (default 64)")
        p.add_argument("--lr", type=float, help="initial learning rate (default 0.0005)")
        p.add_argument("--patience", type=int, help="early-stop patience in epochs (default 40)")
        p.add_argument("--weight-decay", type=float, help="AdamW decoupled weight decay (default 0.01)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imumixer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic segment file")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True, help="recordings per (subject, action)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON-lines file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a segment file")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol (one model per fold)")
    p.add_argument("--protocol", choices=sorted(PROTOCOL_FLAGS), required=True)
    _add_run_flags(p)
    p.add_argument("--jobs", type=int, help="folds trained in parallel (default 1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="print parameter and FLOP counts")
    _add_run_flags(p, data=False)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("stream", help="replay a trace through the reminder engine")
    p.add_argument("--config", help="JSON run config (its 'stream' block is used)")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--trace", required=True, help="JSON-lines trace (segment schema, labels optional)")
    p.add_argument("--stride", type=int, help="window stride in samples (default 64)")
    p.add_argument("--silence-window", type=float, help="seconds a mask event suppresses reminders (default 1800)")
    p.add_argument("--cooldown", type=float, help="minimum seconds between notifications (default 300)")
    p.add_argument("--out", required=True, help="decision CSV path")
    p.set_defaults(func=cmd_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError) as exc:
        print(f"imumixer {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ImuMixerError, OSError) as exc:
        print(f"imumixer {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
