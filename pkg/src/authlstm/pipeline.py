"""Directory-level pipeline stages: ingest, encode, train, detect, evaluate.

Every stage reads artifacts from an input directory, writes its own
artifacts plus ``manifest.json`` and the effective ``config.json`` to an
output directory, and returns one summary line per user.  Input and output
may be the same directory.  Artifacts not found in the input directory are
looked up in the directories that produced it, recorded in the manifest.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import detect, encode, evaluate, ingest, train
from .dataset import make_windows

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG = "config.json"


class ArtifactMissingError(FileNotFoundError):
    pass


class NoEventsError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # training
    epochs: int = 30
    batch_size: int = 5000
    learning_rate: float = 0.1
    window_size: int = 30
    hidden_size: int = 64
    dropout_rate: float = 0.2
    clip_norm: float = 5.0
    train_fraction: float = 0.8
    seed: int = 0
    # ingest
    base_date: str = "2018-01-01T00:00:00+00:00"
    auth: str | None = None
    redteam: str | None = None
    lanl_full: bool = False
    work_dir: str | None = None
    users: list[str] = field(default_factory=list)
    # detection
    tau: float = 0.5
    k: int = 10
    parallel: int = 1

    def training(self) -> train.TrainingConfig:
        names = {f.name for f in fields(train.TrainingConfig)}
        return train.TrainingConfig(**{n: getattr(self, n) for n in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- manifests and artifact lookup -------------------------------------------------

def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def write_stage_outputs(out_dir: Path, in_dir: Path | None, stage: str, config: PipelineConfig,
                        users: list[str], labels_loaded: bool, extra: dict | None = None) -> None:
    previous = read_manifest(out_dir)
    upstream: list[str] = []
    if in_dir is not None:
        src = read_manifest(in_dir)
        for d in [str(in_dir.resolve())] + src.get("upstream", []):
            if d != str(out_dir.resolve()) and d not in upstream:
                upstream.append(d)
    stages = dict(previous.get("stages", {}))
    stages[stage] = {"users": users, **(extra or {})}
    manifest = {
        "labels_loaded": labels_loaded,
        "users": sorted(set(previous.get("users", [])) | set(users)),
        "upstream": upstream or previous.get("upstream", []),
        "stages": stages,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    config.save(out_dir / CONFIG)


def _search_dirs(in_dir: Path) -> list[Path]:
    return [in_dir] + [Path(d) for d in read_manifest(in_dir).get("upstream", [])]


def locate(in_dir: Path, name: str, producer: str) -> Path:
    for d in _search_dirs(in_dir):
        p = d / name
        if p.exists():
            return p
    raise ArtifactMissingError(f"missing {in_dir / name}; produce it with `authlstm {producer}`")


def _select_users(in_dir: Path, suffix: str, producer: str, requested: list[str]) -> list[str]:
    found = sorted({p.name[: -len(suffix)] for d in _search_dirs(in_dir) for p in d.glob(f"*{suffix}")})
    if requested:
        for u in requested:
            if u not in found:
                raise NoEventsError(f"no events for user {u} (no {u}{suffix}; run `authlstm {producer}`)")
        return list(requested)
    if not found:
        raise ArtifactMissingError(f"no *{suffix} files in {in_dir}; produce them with `authlstm {producer}`")
    return found


def _labels_loaded(in_dir: Path) -> bool:
    return bool(read_manifest(in_dir).get("labels_loaded", False))


# -- stages ------------------------------------------------------------------------

def run_ingest(config: PipelineConfig, out_dir) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not config.auth:
        raise ValueError("ingest needs an auth log (--auth)")
    stats = ingest.IngestStats()
    cfg = ingest.IngestConfig(lanl_full=config.lanl_full, base_date=ingest.parse_iso_date(config.base_date))
    events = ingest.ingest_events(config.auth, config.redteam, cfg, stats)
    counts = ingest.partition_to_files(events, out_dir, config.users or None)
    red_counts: dict[str, int] = {}
    for user in counts:
        red_counts[user] = sum(ev.is_red_team for ev in ingest.read_events(ingest.events_path(out_dir, user)))
    users = sorted(counts)
    write_stage_outputs(out_dir, None, "ingest", config, users, config.redteam is not None,
                        {"stats": {k: v for k, v in stats.to_dict().items() if k != "per_user_counts"}})
    lines = [f"ingest: {stats.total_rows} rows, {stats.dropped_rows} dropped, "
             f"{stats.users_seen} users, {stats.red_team_rows} red-team"]
    lines += [f"{u}: {counts[u]} events, {red_counts[u]} red-team" for u in users]
    return lines


def run_encode(config: PipelineConfig, in_dir, out_dir) -> list[str]:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    users = _select_users(in_dir, ".events.csv", "ingest", config.users)
    lines = []
    for user in users:
        events = ingest.read_events(locate(in_dir, f"{user}.events.csv", "ingest"))
        if not events:
            raise NoEventsError(f"no events for user {user}")
        d = encode.build_dictionary(events)
        seq = encode.encode_sequence(events, d)
        encode.save_dictionary(d, encode.dict_path(out_dir, user))
        encode.save_encoded(seq, encode.encoded_path(out_dir, user))
        vocab, top = encode.vocab_report(d)
        lines.append(f"{user}: {len(seq)} events, vocabulary {vocab}, highest frequency {top}")
    write_stage_outputs(out_dir, in_dir, "encode", config, users, _labels_loaded(in_dir))
    return lines


def split_path(directory, user: str) -> Path:
    return Path(directory) / f"{user}.split.json"


def _train_one(args) -> str:
    config, in_dir, out_dir, user = args
    d = encode.load_dictionary(locate(in_dir, f"{user}.dict.json", "encode"))
    seq = encode.load_encoded(locate(in_dir, f"{user}.encoded.csv", "encode"), user)
    if len(seq) == 0:
        raise NoEventsError(f"no events for user {user}")
    tcfg = config.training()
    model, split, trace = train.train_user(seq, d, tcfg, train.model_path(out_dir, user))
    train.write_trace(trace, train.trace_path(out_dir, user))
    split_doc = {
        "window_size": tcfg.window_size,
        "train_fraction": tcfg.train_fraction,
        "seed": split.seed,
        "train_positions": [w.target_position for w in split.train],
        "test_positions": [w.target_position for w in split.test],
    }
    split_path(out_dir, user).write_text(json.dumps(split_doc) + "\n")
    return (f"{user}: {len(split.train)} train / {len(split.test)} test windows, "
            f"{len(trace)} batches, last batch accuracy {trace.last_batch_accuracy:.4f}, "
            f"{trace.total_duration:.1f}s")


def run_train(config: PipelineConfig, in_dir, out_dir) -> list[str]:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    users = _select_users(in_dir, ".encoded.csv", "encode", config.users)
    jobs = [(config, in_dir, out_dir, u) for u in users]
    if config.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallel) as pool:
            lines = list(pool.map(_train_one, jobs))
    else:
        lines = [_train_one(j) for j in jobs]
    write_stage_outputs(out_dir, in_dir, "train", config, users, _labels_loaded(in_dir))
    return lines


def run_detect(config: PipelineConfig, in_dir, out_dir) -> list[str]:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    users = _select_users(in_dir, ".model.json", "train", config.users)
    labels = _labels_loaded(in_dir)
    lines = []
    for user in users:
        d = encode.load_dictionary(locate(in_dir, f"{user}.dict.json", "encode"))
        seq = encode.load_encoded(locate(in_dir, f"{user}.encoded.csv", "encode"), user)
        model = train.load_model(locate(in_dir, f"{user}.model.json", "train"), d.checksum())
        split_doc = json.loads(locate(in_dir, f"{user}.split.json", "train").read_text())
        windows = make_windows(seq, model.window_size)
        by_pos = {w.target_position: w for w in windows}
        test = [by_pos[p] for p in split_doc["test_positions"]]
        records = detect.predict_all(model, test, seq.timestamps)
        report = detect.segment_quadrants(records, config.tau, config.k)
        detect.write_predictions(records, detect.predictions_path(out_dir, user))
        detect.write_report(report, d, detect.report_path(out_dir, user), labels_loaded=labels)
        hits = sum(r.is_red_team for r in report.ranked_low_incorrect)
        tail = f", {hits} red-team in lowest {config.k}" if labels else ""
        lines.append(f"{user}: {len(records)} predictions, "
                     f"{report.counts['low_incorrect']} low/incorrect{tail}")
    write_stage_outputs(out_dir, in_dir, "detect", config, users, labels)
    return lines


def run_evaluate(config: PipelineConfig, in_dir, out_dir) -> list[str]:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    users = _select_users(in_dir, ".predictions.csv", "detect", config.users)
    labels = _labels_loaded(in_dir)
    lines = []
    for user in users:
        records = detect.read_predictions(locate(in_dir, f"{user}.predictions.csv", "detect"))
        curve, summary = evaluate.evaluate_user(records, config.tau, config.k, labels_loaded=labels)
        if curve is not None:
            evaluate.write_roc(curve, evaluate.roc_path(out_dir, user))
        evaluate.write_summary(summary, evaluate.summary_path(out_dir, user))
        auc = f"{summary['auc']:.4f}" if summary["auc"] is not None else "unavailable"
        acc = summary["top1_accuracy"]
        if acc is None:
            lines.append(f"{user}: no predictions")
            continue
        line = f"{user}: AUC {auc}, top-1 accuracy {acc:.4f}"
        if labels and summary["auc"] is not None:
            line += f", threat in top {config.k}: {'yes' if summary['threat_in_top_k'] else 'no'}"
        lines.append(line)
    write_stage_outputs(out_dir, in_dir, "evaluate", config, users, labels)
    return lines


def run_all(config: PipelineConfig, work_dir) -> list[str]:
    work = Path(work_dir)
    lines = run_ingest(config, work)
    lines += run_encode(config, work, work)
    lines += run_train(config, work, work)
    lines += run_detect(config, work, work)
    lines += run_evaluate(config, work, work)
    return lines
