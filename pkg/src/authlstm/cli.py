"""``authlstm`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, synth
from .nn import DivergenceError
from .pipeline import PipelineConfig

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> PipelineConfig field
_TRAIN_FLAGS = {
    "--epochs": ("epochs", int), "--batch-size": ("batch_size", int), "--window": ("window_size", int),
    "--hidden": ("hidden_size", int), "--dropout": ("dropout_rate", float),
    "--lr": ("learning_rate", float), "--seed": ("seed", int), "--parallel": ("parallel", int),
    "--clip-norm": ("clip_norm", float), "--train-fraction": ("train_fraction", float),
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; command-line flags override it")
    p.add_argument("--user", action="append", dest="users", help="restrict to this user (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_io(p: argparse.ArgumentParser):
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)


def _add_ingest_flags(p: argparse.ArgumentParser):
    p.add_argument("--auth")
    p.add_argument("--redteam")
    p.add_argument("--lanl-full", action="store_true", default=None)
    p.add_argument("--base-date")


def _add_train_flags(p: argparse.ArgumentParser):
    for flag, (dest, typ) in _TRAIN_FLAGS.items():
        p.add_argument(flag, dest=dest, type=typ)


def _add_detect_flags(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="authlstm", description="LSTM insider-threat detection on authentication logs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse raw logs into per-user event files")
    _add_common(p)
    _add_ingest_flags(p)
    p.add_argument("--out", dest="out_dir", required=True)

    p = sub.add_parser("encode", help="build per-user event dictionaries and index sequences")
    _add_common(p)
    _add_io(p)

    p = sub.add_parser("train", help="train one model per user")
    _add_common(p)
    _add_io(p)
    _add_train_flags(p)

    p = sub.add_parser("detect", help="score held-out windows and rank anomaly candidates")
    _add_common(p)
    _add_io(p)
    _add_detect_flags(p)

    p = sub.add_parser("evaluate", help="ROC/AUC against red-team ground truth")
    _add_common(p)
    _add_io(p)
    _add_detect_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic auth log with injected anomalies")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--users", type=int, default=1)
    p.add_argument("--events", type=int, default=20_000)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--anomaly-rate", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concentration", type=float, default=synth.HIGH_CONCENTRATION)
    p.add_argument("--anomaly-vocab", type=int, default=200)
    p.add_argument("--anomaly-burst", type=float, default=1.0)
    p.add_argument("--anomaly-mode", choices=["off_support", "rare_transition"], default="off_support")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run-all", help="ingest, encode, train, detect and evaluate in one work directory")
    _add_common(p)
    _add_ingest_flags(p)
    p.add_argument("--out", dest="out_dir", required=True)
    _add_train_flags(p)
    _add_detect_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then explicit flags."""
    base = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    data = base.to_dict()
    direct = {"auth": "auth", "redteam": "redteam", "lanl_full": "lanl_full", "base_date": "base_date",
              "k": "k", "tau": "tau", "users": "users"}
    for dest, key in direct.items():
        val = getattr(args, dest, None)
        if val is not None:
            data[key] = val
    for dest, _ in _TRAIN_FLAGS.values():
        val = getattr(args, dest, None)
        if val is not None:
            data[dest] = val
    if getattr(args, "out_dir", None) and args.command == "run-all":
        data["work_dir"] = args.out_dir
    cfg = PipelineConfig.from_dict(data)
    cfg.training()  # validates
    if args.command in ("ingest", "run-all") and not cfg.auth:
        raise ValueError(f"{args.command} needs --auth (or 'auth' in the config file)")
    return cfg


def _synth(args: argparse.Namespace) -> list[str]:
    spec = synth.SynthSpec(
        users=args.users, events_per_user=args.events, vocab_per_user=args.vocab,
        transition_concentration=args.concentration, anomaly_rate=args.anomaly_rate,
        anomaly_vocab=args.anomaly_vocab, seed=args.seed, anomaly_burst=args.anomaly_burst,
        anomaly_mode=args.anomaly_mode)
    auth, red = synth.write_synth(spec, args.out_dir)
    Path(args.out_dir, "synth.json").write_text(json.dumps(vars(spec), indent=2) + "\n")
    with open(red) as fh:
        n_red = sum(1 for _ in fh)
    return [f"synth: wrote {auth} and {red} ({n_red} red-team rows)"]


_STAGES = {
    "ingest": lambda cfg, a: pipeline.run_ingest(cfg, a.out_dir),
    "encode": lambda cfg, a: pipeline.run_encode(cfg, a.in_dir, a.out_dir),
    "train": lambda cfg, a: pipeline.run_train(cfg, a.in_dir, a.out_dir),
    "detect": lambda cfg, a: pipeline.run_detect(cfg, a.in_dir, a.out_dir),
    "evaluate": lambda cfg, a: pipeline.run_evaluate(cfg, a.in_dir, a.out_dir),
    "run-all": lambda cfg, a: pipeline.run_all(cfg, a.out_dir),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            lines = _synth(args)
        else:
            cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"authlstm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "synth":
        try:
            lines = _STAGES[args.command](cfg, args)
        except DivergenceError as exc:
            print(f"authlstm: training diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        except (ValueError, KeyError, OSError) as exc:
            # format, encoding, model-file, missing-artifact and no-data errors
            msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
            print(f"authlstm: {msg}", file=sys.stderr)
            return EXIT_DATA
    for line in lines:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
