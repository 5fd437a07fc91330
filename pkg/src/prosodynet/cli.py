"""Command-line entry point.

Subcommands:
  extract  WAVs -> per-utterance feature files (CSV and/or binary)
  synth    generate the synthetic labeled corpus
  run      cross-validated training + report (TOML config, flag overrides)
  eval     score one checkpoint against an alignment/label TSV pair
  report   re-render a JSON report as the human-readable table

Exit codes: 0 success, 1 experiment error (e.g. a diverged fold),
2 usage/config error. Config problems are listed all at once.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:           # 3.10
    import tomli as tomllib

import numpy as np

from . import harness, net, plots, synth
from .audio import read_wav
from .corpus import build_dataset, make_scheme, parse_alignments, parse_labels, \
    speaker_map, zscore_per_speaker
from .errors import ConfigError, ProsodyNetError
from .features import extract_features, write_feature_binary, write_feature_csv
from .windows import CONTEXT_ALIASES, WindowConfig, assemble_batch

JOBS_ENV = "PROSODYNET_JOBS"

PATH_KEYS = {"audio_dir": True, "alignments": True, "labels": True,
             "out_dir": False}   # value: must already exist
EXPERIMENT_KEYS = {"name", "task", "feature_set", "context", "cv", "k",
                   "val_size", "epochs", "repetitions", "zscore", "seed",
                   "batch_size", "pool_out", "n_kernels", "learning_rate", "l2"}


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def load_config_file(path: Path):
    """(paths dict, experiment dict); unknown keys and missing files are
    collected and raised together."""
    problems = []
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    for section in data:
        if section not in ("paths", "experiment"):
            problems.append(f"unknown section [{section}]")
    paths = data.get("paths", {})
    exp = data.get("experiment", {})
    for key in paths:
        if key not in PATH_KEYS:
            problems.append(f"unknown key paths.{key}")
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            problems.append(f"unknown key experiment.{key}")
    base = path.parent
    resolved = {}
    for key, must_exist in PATH_KEYS.items():
        if key in paths:
            p = (base / paths[key]).resolve() if not os.path.isabs(paths[key]) \
                else Path(paths[key])
            if must_exist and not p.exists():
                problems.append(f"paths.{key} does not exist: {p}")
            resolved[key] = p
    if problems:
        raise ConfigError(problems)
    return resolved, exp


def _merged_run_config(args):
    """(RunConfig, paths, experiment name) from config file + flag overrides."""
    paths, exp = ({}, {})
    if args.config:
        paths, exp = load_config_file(Path(args.config))

    problems = []
    for key, flag in (("audio_dir", args.audio_dir),
                      ("alignments", args.alignments),
                      ("labels", args.labels),
                      ("out_dir", args.out)):
        if flag is not None:
            paths[key] = Path(flag)
    for key in ("audio_dir", "alignments", "labels"):
        if key not in paths:
            problems.append(f"missing required path {key!r} "
                            "(set in [paths] or via flag)")
        elif not Path(paths[key]).exists():
            problems.append(f"{key} does not exist: {paths[key]}")
    paths.setdefault("out_dir", Path("runs"))

    fields = {f.name for f in dataclasses.fields(harness.RunConfig)}
    kwargs = {k: v for k, v in exp.items() if k in fields}
    name = exp.get("name")
    for key in ("task", "feature_set", "context", "cv", "k", "val_size",
                "epochs", "repetitions", "seed", "batch_size", "pool_out",
                "n_kernels", "learning_rate", "l2"):
        flag = getattr(args, key, None)
        if flag is not None:
            kwargs[key] = flag
    if args.zscore is not None:
        kwargs["zscore"] = args.zscore
    if args.name is not None:
        name = args.name
    if "task" not in kwargs:
        problems.append("missing required setting 'task'")
    if problems:
        raise ConfigError(problems)

    config = harness.RunConfig(**kwargs)
    # "all" expands to the three context variants in cmd_run; validate a
    # concrete stand-in so every other field still gets checked.
    probe = dataclasses.replace(config, context="3w-pf") \
        if config.context == "all" else config
    problems = probe.validate()
    if problems:
        raise ConfigError(problems)
    if name is None:
        name = f"{config.task}_{config.feature_set}_{config.context}_{config.cv}" \
            + ("_zscore" if config.zscore else "")
    return config, paths, name


def _load_corpus(paths, feature_set: str, zscore: bool = False):
    """Tokens, labels, and feature tracks for every aligned utterance."""
    with open(paths["alignments"], "r", encoding="utf-8") as fh:
        tokens = parse_alignments(fh)
    with open(paths["labels"], "r", encoding="utf-8") as fh:
        labels = parse_labels(fh)
    audio_dir = Path(paths["audio_dir"])
    utt_ids = sorted({t.utterance_id for t in tokens})
    missing = [u for u in utt_ids if not (audio_dir / f"{u}.wav").exists()]
    if missing:
        raise ConfigError([f"no WAV for utterance {u!r} under {audio_dir}"
                           for u in missing[:20]])
    tracks = {}
    for utt_id in utt_ids:
        buf = read_wav(audio_dir / f"{utt_id}.wav")
        tracks[utt_id] = extract_features(buf, feature_set, utterance_id=utt_id)
    if zscore:
        tracks = zscore_per_speaker(tracks, speaker_map(tokens))
    return tokens, labels, tracks


def _update_manifest(out_dir: Path, name: str, entry: dict) -> None:
    manifest_path = out_dir / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest[name] = entry
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")


def cmd_extract(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        print(f"error: input directory does not exist: {in_dir}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        print(f"error: no .wav files under {in_dir}", file=sys.stderr)
        return 2
    failures = 0
    for wav in wavs:
        try:
            track = extract_features(read_wav(wav), args.features,
                                     utterance_id=wav.stem)
        except (ProsodyNetError, ValueError) as err:
            print(f"error: {wav.name}: {err}", file=sys.stderr)
            failures += 1
            continue
        if args.format in ("csv", "both"):
            write_feature_csv(track, out_dir / f"{wav.stem}.csv")
        if args.format in ("binary", "both"):
            write_feature_binary(track, out_dir / f"{wav.stem}.f32")
    print(f"extracted {len(wavs) - failures}/{len(wavs)} files "
          f"({args.features}) -> {out_dir}")
    return 1 if failures else 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_speakers=args.speakers,
        n_utterances_per_speaker=args.utterances,
        accent_rate=args.accent_rate,
        boundary_rate=args.boundary_rate,
        distractor_rate=args.distractor_rate,
        noise_level=args.noise,
        seed=args.seed)
    corpus = synth.generate_corpus(spec)
    synth.write_corpus(corpus, args.out)
    print(f"wrote {corpus.manifest['n_utterances']} utterances, "
          f"{corpus.manifest['n_words']} words -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config, paths, name = _merged_run_config(args)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    out_root = Path(paths["out_dir"])
    exp_dir = out_root / name
    contexts = [config.context] if config.context != "all" \
        else list(CONTEXT_ALIASES)
    # "all" is resolved here, so RunConfig.validate never sees it.

    failed = 0
    summary = {}
    tokens, labels, tracks = _load_corpus(paths, config.feature_set)
    for alias in contexts:
        variant = dataclasses.replace(config, context=alias)
        report, artifacts = harness.run_experiment(variant, tokens, labels,
                                                   tracks, jobs=jobs)
        target = exp_dir if len(contexts) == 1 else exp_dir / alias
        harness.write_report_files(report, artifacts, target)
        failed += len(report["failed_folds"])
        headline = report.get("word_weighted_accuracy")
        if headline is None:
            headline = report["mean_accuracy"]
        summary[alias] = {"mean_accuracy": report["mean_accuracy"],
                          "headline_accuracy": headline,
                          "baseline": report["baseline"]}
        shown = "n/a" if report["mean_accuracy"] is None \
            else f"{report['mean_accuracy']:.4f}"
        print(f"{name} [{alias}]: mean accuracy {shown} "
              f"(baseline {report['baseline']:.4f}) -> {target}")
    if len(contexts) > 1:
        (exp_dir / "context_comparison.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
        usable = {a: v["headline_accuracy"] for a, v in summary.items()
                  if v["headline_accuracy"] is not None}
        if usable:
            plots.save_context_comparison(
                usable, next(iter(summary.values()))["baseline"],
                exp_dir / "context_comparison.png")
    _update_manifest(out_root, name, {
        "config": dataclasses.asdict(config),
        "paths": {k: str(v) for k, v in paths.items()},
        "contexts": summary,
    })
    return 1 if failed else 0


def cmd_eval(args) -> int:
    params, header = net.load_checkpoint(args.checkpoint)
    paths = {"audio_dir": args.audio_dir, "alignments": args.alignments,
             "labels": args.labels}
    missing = [k for k, v in paths.items() if v is None]
    if missing:
        raise ConfigError([f"missing required flag --{k.replace('_', '-')}"
                           for k in missing])
    tokens, labels, tracks = _load_corpus(paths, header["feature_set"],
                                          zscore=header.get("zscore", False))
    scheme = make_scheme(header["task"])
    entries, _ = build_dataset(tokens, labels, tracks, scheme)
    context, pf = CONTEXT_ALIASES[header["context"]]
    wcfg = WindowConfig(context=context, position_feature=pf,
                        max_frames=header["max_frames"],
                        base_dim=header["base_dim"])
    X, y = assemble_batch(entries, wcfg)
    metrics = harness.evaluate(params, X, y, scheme.n_classes)
    print(f"accuracy: {metrics.accuracy:.4f} on {metrics.n_test} words "
          f"(task {header['task']}, context {header['context']})")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({
            "accuracy": metrics.accuracy,
            "n_test": metrics.n_test,
            "confusion": metrics.confusion.tolist(),
            "class_names": list(scheme.classes),
            "checkpoint": str(args.checkpoint),
        }, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    sys.stdout.write(harness.render_report_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prosodynet",
        description="Word-level prosodic event recognition with a "
                    "from-scratch CNN")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract features from WAV files")
    p.add_argument("--features", default="prosody",
                   choices=("prosody", "mel", "prosody_mel"))
    p.add_argument("--in", dest="in_dir", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--format", default="csv", choices=("csv", "binary", "both"))
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--speakers", type=int, default=5)
    p.add_argument("--utterances", type=int, default=60,
                   help="utterances per speaker")
    p.add_argument("--accent-rate", type=float, default=0.5)
    p.add_argument("--boundary-rate", type=float, default=0.6)
    p.add_argument("--distractor-rate", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run a cross-validated experiment")
    p.add_argument("--config", metavar="TOML")
    p.add_argument("--name")
    p.add_argument("--audio-dir")
    p.add_argument("--alignments")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--task", choices=("pa_detect", "pa_classify",
                                      "pb_detect", "pb_classify"))
    p.add_argument("--features", dest="feature_set",
                   choices=("prosody", "mel", "prosody_mel"))
    p.add_argument("--context", choices=("1w", "3w", "3w-pf", "all"))
    p.add_argument("--cv", choices=("kfold", "loso"))
    p.add_argument("--k", type=int)
    p.add_argument("--val-size", dest="val_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--reps", dest="repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pool-out", dest="pool_out", type=int)
    p.add_argument("--n-kernels", dest="n_kernels", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--l2", type=float)
    z = p.add_mutually_exclusive_group()
    z.add_argument("--zscore", dest="zscore", action="store_true", default=None,
                   help="z-score features per speaker before windowing")
    z.add_argument("--no-zscore", dest="zscore", action="store_false",
                   default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker threads (default ${JOBS_ENV} or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--alignments", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a JSON report as text")
    p.add_argument("--report", required=True, metavar="JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ProsodyNetError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
