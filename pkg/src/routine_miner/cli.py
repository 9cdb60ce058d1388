"""``routine-miner`` command line.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand writes
its artifacts plus ``<command>.manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import __version__, _jit
from .corpus import TokenizerConfig, corpus_from_events, load_corpus, save_corpus
from .errors import RoutineMinerError
from .ingest import DetectionConfig, detect_columns, events_to_csv, format_imu_lines, \
    format_timestamp, from_ms, read_events_csv, read_sample_columns
from .lda import LdaConfig, fit, load_model, save_model, select_k
from .report import build_report
from .svg import object_palette, render_svg
from .synth import ScenarioSpec, generate_events, generate_sample_arrays, household_scenario

logger = logging.getLogger("routine_miner")

MANIFEST_SCHEMA_VERSION = "1.0"

DEFAULTS = {
    "threshold": 0.1,
    "wake": 20.0,
    "merge_gap": 1.0,
    "sample_rate": 20.0,
    "tz": "UTC",
    "household": "household",
    "include_empty_days": False,
    "k": 10,
    "alpha": 0.1,
    "eta": 0.1,
    "iters": 1000,
    "burn_in": 500,
    "min_prob": 0.01,
    "dup_threshold": 0.05,
    "candidates": "2,3,5,8,10",
    "folds": 3,
    "method": "completion",
    "fold_in_sweeps": 100,
    "workers": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class Run:
    """Collects inputs and outputs of one command for its manifest."""

    command: str
    out: Path
    config: dict = field(default_factory=dict)
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.outputs.append(path)
        return path

    def manifest(self) -> Path:
        data = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "command": self.command,
            "version": __version__,
            "backend": _jit.BACKEND,
            "config": self.config,
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs],
            "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in self.outputs],
        }
        path = self.out / f"{self.command}.manifest.json"
        path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# option handling


def _settings(args, names: Sequence[str]) -> dict:
    """Flag value, else ``--config`` value, else default."""
    file_cfg = {}
    if getattr(args, "config", None):
        path = _existing(args.config)
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise RoutineMinerError(f"{path}: invalid JSON config ({exc.msg})") from None
        if not isinstance(file_cfg, dict):
            raise RoutineMinerError(f"{path}: config must be a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    out = {}
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            value = file_cfg.get(name, DEFAULTS.get(name))
        out[name] = value
    return out


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _outdir(args, *inputs) -> Path:
    out = Path(args.out)
    for item in inputs:
        if item is not None and Path(item).resolve() == out.resolve():
            raise UsageError(f"--out {out} must differ from input path {item}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detection(cfg: dict) -> DetectionConfig:
    try:
        return DetectionConfig(threshold=float(cfg["threshold"]), wake_duration=float(cfg["wake"]),
                               merge_gap=float(cfg["merge_gap"]), sample_rate=float(cfg["sample_rate"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tokenizer(cfg: dict) -> TokenizerConfig:
    try:
        return TokenizerConfig(timezone=cfg["tz"], include_empty_days=bool(cfg["include_empty_days"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _lda(cfg: dict, seed: int, k=None) -> LdaConfig:
    try:
        return LdaConfig(K=int(cfg["k"] if k is None else k), alpha=float(cfg["alpha"]),
                         eta=float(cfg["eta"]), iterations=int(cfg["iters"]),
                         burn_in=int(cfg["burn_in"]), seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _report_thresholds(cfg: dict) -> tuple[float, float]:
    min_prob, dup = float(cfg["min_prob"]), float(cfg["dup_threshold"])
    if not 0 <= min_prob < 1:
        raise UsageError(f"--min-prob must lie in [0, 1), got {min_prob}")
    if not dup > 0:
        raise UsageError(f"--dup-threshold must be > 0, got {dup}")
    return min_prob, dup


def _candidates(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        values = text
    else:
        values = [t for t in str(text).split(",") if t.strip()]
    try:
        ks = [int(v) for v in values]
    except ValueError:
        raise UsageError(f"--candidates must be comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--candidates needs at least one K and every K >= 1")
    return ks


def _read_samples(path: Path):
    with open(path, encoding="utf-8") as fh:
        return read_sample_columns(fh, source=str(path))


def _read_events(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        return read_events_csv(fh, source=str(path))


def _load_model_file(path: Path):
    text = path.read_text(encoding="utf-8")
    return load_model(text, source=str(path))


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> Run:
    if args.scenario:
        path = _existing(args.scenario)
        try:
            scenario = ScenarioSpec.from_json(path.read_text(encoding="utf-8"))
        except (KeyError, ValueError, TypeError) as exc:
            raise RoutineMinerError(f"{path}: invalid scenario ({exc})") from None
    else:
        scenario = household_scenario()
    scenario = replace(scenario, seed=args.seed)
    cfg = _settings(args, ["threshold", "wake", "merge_gap", "sample_rate"])
    detection = _detection(cfg)
    run = Run("simulate", _outdir(args, args.scenario), {"scenario": scenario.to_dict(), **cfg})
    if args.scenario:
        run.inputs.append(Path(args.scenario))
    events, truth = generate_events(scenario, detection)
    run.write("scenario.json", json.dumps(scenario.to_dict(), indent=1) + "\n")
    run.write("truth_events.csv", events_to_csv(events))
    run.write("truth.json", json.dumps({
        "routines": list(truth.routine_names),
        "day_mixtures": truth.day_mixtures.tolist(),
        "day_counts": truth.day_counts.tolist(),
        "labels": list(truth.labels),
    }) + "\n")
    if not args.no_samples:
        arrays = generate_sample_arrays(events, detection, seed=args.seed)
        path = run.out / "samples.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for device, (times, accel) in arrays.items():
                fh.writelines(format_imu_lines(device, times, accel))
        run.outputs.append(path)
    return run


def cmd_ingest(args) -> Run:
    src = _existing(args.input)
    run = Run("ingest", _outdir(args, args.input), inputs=[src])
    cols = _read_samples(src)
    summary = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "imu_samples": cols.imu_count,
        "env_samples": cols.env_count,
        "out_of_order": cols.out_of_order,
        "devices": {
            dev: {
                "imu_samples": int(t.size),
                "first": format_timestamp(from_ms(int(t[0]))),
                "last": format_timestamp(from_ms(int(t[-1]))),
            }
            for dev, (t, _) in cols.imu.items()
        },
    }
    run.write("ingest.json", json.dumps(summary, indent=1) + "\n")
    return run


def cmd_detect(args) -> Run:
    cfg = _settings(args, ["threshold", "wake", "merge_gap", "sample_rate"])
    detection = _detection(cfg)
    src = _existing(args.input)
    run = Run("detect", _outdir(args, args.input), cfg, [src])
    events = detect_columns(_read_samples(src), detection)
    run.write("events.csv", events_to_csv(events))
    return run


def cmd_tokenize(args) -> Run:
    cfg = _settings(args, ["tz", "household", "include_empty_days"])
    tok = _tokenizer(cfg)
    src = _existing(args.events)
    run = Run("tokenize", _outdir(args, args.events), cfg, [src])
    corpus = corpus_from_events(_read_events(src), cfg["household"], tok)
    run.config["documents"] = corpus.M
    run.config["empty_days"] = corpus.empty_days()
    run.write("corpus.txt", save_corpus(corpus))
    return run


def _load_corpus_file(path: Path):
    return load_corpus(path.read_text(encoding="utf-8"), source=str(path))


def cmd_fit(args) -> Run:
    cfg = _settings(args, ["k", "alpha", "eta", "iters", "burn_in"])
    config = _lda(cfg, args.seed)
    src = _existing(args.corpus)
    run = Run("fit", _outdir(args, args.corpus), config.to_dict(), [src])
    model = fit(_load_corpus_file(src), config)
    run.write("model.json", save_model(model))
    return run


def cmd_select_k(args) -> Run:
    cfg = _settings(args, ["candidates", "folds", "alpha", "eta", "iters", "burn_in",
                           "method", "fold_in_sweeps", "workers"])
    ks = _candidates(cfg["candidates"])
    template = _lda({**cfg, "k": 1}, args.seed)
    if int(cfg["folds"]) < 2:
        raise UsageError("--folds must be >= 2")
    if cfg["method"] not in ("fold-in", "completion"):
        raise UsageError(f"--method must be fold-in or completion, got {cfg['method']!r}")
    src = _existing(args.corpus)
    run = Run("select-k", _outdir(args, args.corpus), {**cfg, "candidates": ks, "seed": args.seed}, [src])
    selection = select_k(_load_corpus_file(src), ks, int(cfg["folds"]), template,
                         fold_in_sweeps=int(cfg["fold_in_sweeps"]), method=cfg["method"],
                         workers=int(cfg["workers"]))
    run.write("selection.json", json.dumps(selection.to_dict(), indent=1) + "\n")
    for row in selection.table:
        if row.status == "excluded":
            print(f"K={row.K}: excluded ({row.reason})")
        else:
            print(f"K={row.K}: mean held-out perplexity {row.mean_perplexity:.4f}")
    print(f"chosen K={selection.chosen_k}")
    return run


def _write_report(run: Run, model, min_prob: float, dup: float) -> None:
    report = build_report(model, min_prob, dup)
    palette = object_palette(t.object_id for t in model.vocabulary)
    run.write("report.json", report.to_json())
    run.write("topics.svg", render_svg(report.topics, palette))


def cmd_report(args) -> Run:
    cfg = _settings(args, ["min_prob", "dup_threshold"])
    min_prob, dup = _report_thresholds(cfg)
    src = _existing(args.model)
    run = Run("report", _outdir(args, args.model), cfg, [src])
    _write_report(run, _load_model_file(src), min_prob, dup)
    return run


def cmd_pipeline(args) -> Run:
    names = ["threshold", "wake", "merge_gap", "sample_rate", "tz", "household",
             "include_empty_days", "k", "alpha", "eta", "iters", "burn_in",
             "min_prob", "dup_threshold"]
    cfg = _settings(args, names)
    detection = _detection(cfg)
    tok = _tokenizer(cfg)
    config = _lda(cfg, args.seed)
    min_prob, dup = _report_thresholds(cfg)
    src = _existing(args.input)
    run = Run("pipeline", _outdir(args, args.input), {**cfg, "seed": args.seed}, [src])
    events = detect_columns(_read_samples(src), detection)
    run.write("events.csv", events_to_csv(events))
    corpus = corpus_from_events(events, cfg["household"], tok)
    corpus_path = run.write("corpus.txt", save_corpus(corpus))
    # fit from the saved text so the result matches `fit --corpus corpus.txt`
    model = fit(_load_corpus_file(corpus_path), config)
    run.write("model.json", save_model(model))
    _write_report(run, model, min_prob, dup)
    return run


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="routine-miner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed_required=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON file of option defaults")
        if seed_required:
            p.add_argument("--seed", type=int, required=True, help="RNG seed (u64)")

    def detection(p):
        p.add_argument("--threshold", type=float, help="amplitude threshold in g (0.1)")
        p.add_argument("--wake", type=float, help="wake window in seconds (20)")
        p.add_argument("--merge-gap", dest="merge_gap", type=float, help="merge gap in seconds (1)")
        p.add_argument("--sample-rate", dest="sample_rate", type=float, help="IMU rate in Hz (20)")

    def tokenizer(p):
        p.add_argument("--tz", help="household IANA timezone (UTC)")
        p.add_argument("--household", help="household id")
        p.add_argument("--include-empty-days", dest="include_empty_days", action="store_true",
                       default=None)

    def priors(p):
        p.add_argument("--alpha", type=float, help="document-topic prior (0.1)")
        p.add_argument("--eta", type=float, help="topic-word prior (0.1)")
        p.add_argument("--iters", type=int, help="Gibbs sweeps (1000)")
        p.add_argument("--burn-in", dest="burn_in", type=int, help="discarded sweeps (500)")

    def reporting(p):
        p.add_argument("--min-prob", dest="min_prob", type=float, help="display threshold (0.01)")
        p.add_argument("--dup-threshold", dest="dup_threshold", type=float,
                       help="JSD duplicate threshold in nats (0.05)")

    p = sub.add_parser("simulate", help="generate a planted-routine scenario")
    common(p, seed_required=True)
    p.add_argument("--scenario", help="scenario JSON (default: three-routine household)")
    p.add_argument("--no-samples", action="store_true", help="skip samples.jsonl")
    detection(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate a sample log and summarise it")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect", help="detect movement events")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    detection(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("tokenize", help="build a day-document corpus from events")
    common(p)
    p.add_argument("--events", required=True)
    tokenizer(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("fit", help="fit LDA to a corpus")
    common(p, seed_required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, help="number of topics (10)")
    priors(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="cross-validate the number of topics")
    common(p, seed_required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", help="comma-separated K values")
    p.add_argument("--folds", type=int)
    p.add_argument("--method", help="held-out scoring: completion or fold-in")
    p.add_argument("--fold-in-sweeps", dest="fold_in_sweeps", type=int)
    p.add_argument("--workers", type=int, help="parallel fold fits")
    priors(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("report", help="topic report and bubble chart")
    common(p)
    p.add_argument("--model", required=True)
    reporting(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="detect, tokenize, fit and report in one go")
    common(p, seed_required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int, help="number of topics (10)")
    detection(p)
    tokenizer(p)
    priors(p)
    reporting(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("ROUTINE_MINER_LOG", "warn").strip().lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("routine-miner: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        run = args.func(args)
        run.manifest()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"routine-miner {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"routine-miner {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RoutineMinerError, ValueError) as exc:
        print(f"routine-miner {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
