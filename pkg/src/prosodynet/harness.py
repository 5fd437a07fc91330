"""Cross-validated training, evaluation, and experiment reports.

Two cross-validation styles: seeded k-fold over words, and
leave-one-speaker-out with validation words drawn from a same-gender
non-test speaker. Experiments repeat with derived seeds and average fold
accuracy within a repetition, then across repetitions. Reports are plain
dicts serialized deterministically (no timestamps, sorted keys) so a rerun
with the same seed/config/data is byte-identical.
"""

import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net, plots
from .corpus import (TASKS, build_dataset, make_scheme, speaker_map,
                     write_exclusion_report, zscore_per_speaker)
from .errors import (ConfigError, DivergedError, ShapeError, TooFewEntries,
                     TooFewSpeakers)
from .windows import CONTEXT_ALIASES, WindowConfig, assemble_batch, scan_max_frames

log = logging.getLogger(__name__)

FEATURE_SET_NAMES = ("prosody", "mel", "prosody_mel")
CV_KINDS = ("kfold", "loso")
PREDICT_CHUNK = 512


@dataclass
class Fold:
    fold_id: str
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    test_speaker: str = None
    val_speaker: str = None


@dataclass
class CVPlan:
    kind: str
    folds: list


@dataclass
class RunConfig:
    task: str
    feature_set: str = "prosody"
    context: str = "3w-pf"
    cv: str = "kfold"
    k: int = 10
    val_size: int = None
    epochs: int = 50
    repetitions: int = 3
    zscore: bool = False
    seed: int = 0
    batch_size: int = 32
    pool_out: int = 2
    n_kernels: int = 100
    learning_rate: float = 1e-3
    l2: float = 1e-4

    def resolved_val_size(self) -> int:
        if self.val_size is not None:
            return self.val_size
        return 1000 if self.cv == "kfold" else 500

    def validate(self) -> list:
        """All problems at once, empty when the config is usable."""
        problems = []
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS}, got {self.task!r}")
        if self.feature_set not in FEATURE_SET_NAMES:
            problems.append(f"feature_set must be one of {FEATURE_SET_NAMES}, "
                            f"got {self.feature_set!r}")
        if self.context not in CONTEXT_ALIASES:
            problems.append(f"context must be one of {tuple(CONTEXT_ALIASES)}, "
                            f"got {self.context!r}")
        if self.cv not in CV_KINDS:
            problems.append(f"cv must be one of {CV_KINDS}, got {self.cv!r}")
        for name in ("k", "epochs", "repetitions", "batch_size", "pool_out",
                     "n_kernels"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.val_size is not None and self.val_size < 1:
            problems.append(f"val_size must be >= 1, got {self.val_size}")
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2 < 0:
            problems.append(f"l2 must be >= 0, got {self.l2}")
        return problems


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray
    n_test: int


@dataclass
class TrainResult:
    params: net.ModelParams
    best_epoch: int
    best_val_accuracy: float
    log_rows: list


def make_kfold(entries, k: int, val_size: int, seed: int) -> CVPlan:
    """Seeded shuffle into k test chunks; validation drawn from each fold's
    training portion and removed from it. Chunk sizes differ by at most 1,
    earlier chunks taking the remainder."""
    n = entries if isinstance(entries, int) else len(entries)
    if k < 2 or k > n:
        raise TooFewEntries(f"cannot make {k} folds from {n} entries")
    rng = np.random.default_rng(seed)
    chunks = np.array_split(rng.permutation(n), k)
    folds = []
    for i, test in enumerate(chunks):
        rest = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        if val_size >= rest.size:
            raise TooFewEntries(f"val_size {val_size} leaves no training data "
                                f"(fold {i} has {rest.size} non-test entries)")
        folds.append(Fold(fold_id=f"fold{i:02d}",
                          train_idx=np.sort(rest[val_size:]),
                          val_idx=np.sort(rest[:val_size]),
                          test_idx=np.sort(test)))
    return CVPlan(kind="kfold", folds=folds)


def make_loso(entries, val_size: int, seed: int) -> CVPlan:
    """One fold per speaker. Validation words come from a seeded same-gender
    other speaker (any other speaker, with a warning, when none exists) and
    are excluded from training."""
    speakers = sorted({e.token.speaker_id for e in entries})
    if len(speakers) < 2:
        raise TooFewSpeakers(f"leave-one-speaker-out needs >= 2 speakers, "
                             f"got {speakers}")
    gender_of = {}
    idx_by_spk = {s: [] for s in speakers}
    for i, e in enumerate(entries):
        gender_of[e.token.speaker_id] = e.token.gender
        idx_by_spk[e.token.speaker_id].append(i)
    idx_by_spk = {s: np.asarray(v) for s, v in idx_by_spk.items()}

    rng = np.random.default_rng(seed)
    folds = []
    for spk in speakers:
        same = [s for s in speakers if s != spk and gender_of[s] == gender_of[spk]]
        if same:
            val_spk = same[int(rng.integers(len(same)))]
        else:
            others = [s for s in speakers if s != spk]
            val_spk = others[int(rng.integers(len(others)))]
            log.warning("no same-gender validation speaker for %s; using %s",
                        spk, val_spk)
        pool = rng.permutation(idx_by_spk[val_spk])
        if val_size > pool.size:
            log.warning("validation speaker %s has only %d words (%d requested)",
                        val_spk, pool.size, val_size)
        val = np.sort(pool[:val_size])
        val_set = set(val.tolist())
        train = np.sort(np.asarray([i for s in speakers if s != spk
                                    for i in idx_by_spk[s] if i not in val_set]))
        folds.append(Fold(fold_id=spk, train_idx=train, val_idx=val,
                          test_idx=idx_by_spk[spk], test_speaker=spk,
                          val_speaker=val_spk))
    return CVPlan(kind="loso", folds=folds)


def predict_chunked(X: np.ndarray, params: net.ModelParams,
                    chunk: int = PREDICT_CHUNK) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.int64)
    for lo in range(0, X.shape[0], chunk):
        out[lo:lo + chunk] = net.predict_batch(X[lo:lo + chunk], params)
    return out


def evaluate(params: net.ModelParams, X_test: np.ndarray, y_test: np.ndarray,
             n_classes: int) -> Metrics:
    """Accuracy and confusion matrix (rows true, columns predicted)."""
    if n_classes != params.n_classes:
        raise ShapeError(f"checkpoint has {params.n_classes} classes, "
                         f"task needs {n_classes}")
    pred = predict_chunked(X_test, params)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_test, pred), 1)
    accuracy = float(np.trace(confusion)) / y_test.size
    return Metrics(accuracy=accuracy, confusion=confusion, n_test=int(y_test.size))


def majority_baseline(dataset) -> float:
    """Largest class share; accepts entries or a label array."""
    if len(dataset) == 0:
        raise TooFewEntries("baseline of an empty dataset")
    if hasattr(dataset[0], "class_index"):
        y = np.asarray([e.class_index for e in dataset])
    else:
        y = np.asarray(dataset)
    return float(np.bincount(y).max()) / y.size


def _copy_params(params: net.ModelParams) -> net.ModelParams:
    return net.ModelParams(
        conv1=net.ConvLayerParams(params.conv1.kernels.copy(),
                                  params.conv1.biases.copy(),
                                  params.conv1.stride),
        conv2=net.ConvLayerParams(params.conv2.kernels.copy(),
                                  params.conv2.biases.copy(),
                                  params.conv2.stride),
        softmax_w=params.softmax_w.copy(), softmax_b=params.softmax_b.copy(),
        pool_out=params.pool_out, n_classes=params.n_classes)


def train_model(X: np.ndarray, y: np.ndarray, fold: Fold, config: RunConfig,
                seed_seq: np.random.SeedSequence) -> TrainResult:
    """Train up to config.epochs, keeping the checkpoint with the best
    validation accuracy (earliest epoch wins ties)."""
    n_classes = make_scheme(config.task).n_classes
    init_ss, loop_ss = seed_seq.spawn(2)
    params = net.init_params(X.shape[1], n_classes, pool_out=config.pool_out,
                             n_kernels=config.n_kernels,
                             rng=np.random.default_rng(init_ss))
    state = net.init_adam(params, alpha=config.learning_rate, l2=config.l2)
    rng = np.random.default_rng(loop_ss)

    best = None
    log_rows = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(fold.train_idx)
        loss_sum = 0.0
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            trace = net.forward_batch(X[batch], params, dropout_rng=rng)
            loss = net.batch_cross_entropy(trace.probs, y[batch])
            if not np.isfinite(loss):
                raise DivergedError(f"{fold.fold_id}: loss {loss} at epoch {epoch}")
            grads = net.backward_batch(trace, y[batch], params)
            net.adam_step(params, grads, state)
            loss_sum += loss * batch.size
        train_loss = loss_sum / order.size
        val_pred = predict_chunked(X[fold.val_idx], params)
        val_acc = float(np.mean(val_pred == y[fold.val_idx]))
        log_rows.append((epoch, train_loss, val_acc))
        if best is None or val_acc > best[2]:
            best = (_copy_params(params), epoch, val_acc)
    return TrainResult(params=best[0], best_epoch=best[1],
                       best_val_accuracy=best[2], log_rows=log_rows)


def _min_window_width(config: RunConfig) -> int:
    t1 = (config.pool_out - 1) * net.STRIDE2 + net.K2_WIDTH
    return (t1 - 1) * net.STRIDE1 + net.K1_WIDTH


def prepare_inputs(tokens, labels, tracks, config: RunConfig):
    """Dataset entries, padded input matrices, and labels for a run."""
    scheme = make_scheme(config.task)
    if config.zscore:
        tracks = zscore_per_speaker(tracks, speaker_map(tokens))
    entries, exclusions = build_dataset(tokens, labels, tracks, scheme)
    context, pf = CONTEXT_ALIASES[config.context]
    base_dim = next(iter(tracks.values())).n_features
    max_frames = max(scan_max_frames(entries, context), _min_window_width(config))
    wcfg = WindowConfig(context=context, position_feature=pf,
                        max_frames=max_frames, base_dim=base_dim)
    X, y = assemble_batch(entries, wcfg)
    return entries, exclusions, scheme, wcfg, X, y


def _run_fold(X, y, fold, config, rep, fold_index, n_classes):
    seed_seq = np.random.SeedSequence([config.seed, rep, fold_index])
    result = train_model(X, y, fold, config, seed_seq)
    metrics = evaluate(result.params, X[fold.test_idx], y[fold.test_idx], n_classes)
    return result, metrics


def run_experiment(config: RunConfig, tokens, labels, tracks, jobs: int = 1):
    """All repetitions and folds of one configuration.

    Returns (report dict, artifacts). Artifacts carry per-fold training
    logs and best checkpoints for the report writer. Diverged folds are
    flagged in the report instead of aborting the experiment.
    """
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    entries, exclusions, scheme, wcfg, X, y = prepare_inputs(
        tokens, labels, tracks, config)
    if config.cv == "kfold":
        plan = make_kfold(entries, config.k, config.resolved_val_size(), config.seed)
    else:
        plan = make_loso(entries, config.resolved_val_size(), config.seed)

    tasks = [(rep, fi) for rep in range(config.repetitions)
             for fi in range(len(plan.folds))]

    def run_one(key):
        rep, fi = key
        fold = plan.folds[fi]
        try:
            return key, _run_fold(X, y, fold, config, rep, fi, scheme.n_classes)
        except DivergedError as err:
            log.warning("fold diverged: %s", err)
            return key, err

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = dict(pool.map(run_one, tasks))
    else:
        outcomes = dict(map(run_one, tasks))

    rep_blocks = []
    artifacts = []
    failed = []
    total_confusion = np.zeros((scheme.n_classes, scheme.n_classes), dtype=np.int64)
    speaker_accs = {}
    for rep in range(config.repetitions):
        fold_rows = []
        accs, corrects, totals = [], 0, 0
        for fi, fold in enumerate(plan.folds):
            outcome = outcomes[(rep, fi)]
            if isinstance(outcome, DivergedError):
                failed.append({"repetition": rep, "fold_id": fold.fold_id,
                               "error": str(outcome)})
                fold_rows.append({"fold_id": fold.fold_id, "diverged": True})
                continue
            result, metrics = outcome
            fold_rows.append({
                "fold_id": fold.fold_id,
                "diverged": False,
                "accuracy": metrics.accuracy,
                "n_test": metrics.n_test,
                "best_epoch": result.best_epoch,
                "best_val_accuracy": result.best_val_accuracy,
                "confusion": metrics.confusion.tolist(),
            })
            accs.append(metrics.accuracy)
            corrects += int(np.trace(metrics.confusion))
            totals += metrics.n_test
            total_confusion += metrics.confusion
            if fold.test_speaker is not None:
                speaker_accs.setdefault(fold.test_speaker, []).append(metrics.accuracy)
            artifacts.append({"repetition": rep, "fold": fold,
                              "result": result, "window": wcfg})
        block = {"repetition": rep, "folds": fold_rows}
        if accs:
            block["mean_accuracy"] = float(np.mean(accs))
            block["word_weighted_accuracy"] = corrects / totals
        rep_blocks.append(block)

    excl_buf = io.StringIO()
    write_exclusion_report(exclusions, excl_buf)
    rep_means = [b["mean_accuracy"] for b in rep_blocks if "mean_accuracy" in b]
    report = {
        "config": dataclasses.asdict(config),
        "cv_kind": plan.kind,
        "window": {"context": wcfg.context, "position_feature": wcfg.position_feature,
                   "max_frames": wcfg.max_frames, "base_dim": wcfg.base_dim},
        "class_names": list(scheme.classes),
        "n_entries": len(entries),
        "n_excluded": len(exclusions),
        "exclusion_report": excl_buf.getvalue(),
        "class_distribution": np.bincount(y, minlength=scheme.n_classes).tolist(),
        "baseline": majority_baseline(y),
        "repetitions": rep_blocks,
        "mean_accuracy": float(np.mean(rep_means)) if rep_means else None,
        "total_confusion": total_confusion.tolist(),
        "failed_folds": failed,
    }
    if plan.kind == "loso":
        report["per_speaker"] = {s: float(np.mean(a))
                                 for s, a in sorted(speaker_accs.items())}
        ww = [b["word_weighted_accuracy"] for b in rep_blocks
              if "word_weighted_accuracy" in b]
        report["word_weighted_accuracy"] = float(np.mean(ww)) if ww else None
    return report, artifacts


def render_report_table(report: dict) -> str:
    """Human-readable summary mirroring the JSON report."""
    cfg = report["config"]
    lines = []
    lines.append(f"task: {cfg['task']}   features: {cfg['feature_set']}   "
                 f"context: {cfg['context']}   cv: {report['cv_kind']}   "
                 f"zscore: {cfg['zscore']}   seed: {cfg['seed']}")
    lines.append(f"entries: {report['n_entries']}   excluded: {report['n_excluded']}   "
                 f"classes: {'/'.join(report['class_names'])}")
    lines.append(f"majority baseline: {report['baseline']:.4f}")
    lines.append("")
    lines.append(f"{'rep':>3}  {'fold':<10} {'accuracy':>9} {'n_test':>7} "
                 f"{'best_epoch':>10}")
    for block in report["repetitions"]:
        for row in block["folds"]:
            if row.get("diverged"):
                lines.append(f"{block['repetition']:>3}  {row['fold_id']:<10} "
                             f"{'DIVERGED':>9}")
            else:
                lines.append(f"{block['repetition']:>3}  {row['fold_id']:<10} "
                             f"{row['accuracy']:>9.4f} {row['n_test']:>7} "
                             f"{row['best_epoch']:>10}")
        if "mean_accuracy" in block:
            lines.append(f"     repetition {block['repetition']} mean: "
                         f"{block['mean_accuracy']:.4f}")
    lines.append("")
    if report.get("mean_accuracy") is not None:
        lines.append(f"mean accuracy over repetitions: {report['mean_accuracy']:.4f}")
    if "word_weighted_accuracy" in report and report["word_weighted_accuracy"] is not None:
        lines.append(f"word-weighted accuracy: {report['word_weighted_accuracy']:.4f}")
    if "per_speaker" in report:
        lines.append("")
        lines.append("per-speaker accuracy:")
        for spk, acc in report["per_speaker"].items():
            lines.append(f"  {spk:<10} {acc:.4f}")
    if report["failed_folds"]:
        lines.append("")
        lines.append(f"failed folds: {len(report['failed_folds'])}")
    return "\n".join(lines) + "\n"


def report_json_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_report_files(report: dict, artifacts, out_dir) -> None:
    """report.json, report.txt, figures/, and per-fold logs + checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(report_json_bytes(report))
    (out / "report.txt").write_text(render_report_table(report), encoding="utf-8")
    (out / "exclusions.tsv").write_text(report.get("exclusion_report", ""),
                                        encoding="utf-8")

    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    fold_logs = {}
    for art in artifacts:
        key = f"rep{art['repetition']}_{art['fold'].fold_id}"
        fold_logs[key] = art["result"].log_rows
    if fold_logs:
        plots.save_training_curves(fold_logs, fig_dir / "training_curves.png")
    plots.save_confusion(np.asarray(report["total_confusion"]),
                         report["class_names"], fig_dir / "confusion.png")
    if "per_speaker" in report:
        plots.save_speaker_bars(report["per_speaker"], report["baseline"],
                                fig_dir / "per_speaker_accuracy.png")

    for art in artifacts:
        fold_dir = out / "folds" / f"rep{art['repetition']}" / art["fold"].fold_id
        fold_dir.mkdir(parents=True, exist_ok=True)
        with open(fold_dir / "training_log.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_accuracy"])
            for epoch, loss, acc in art["result"].log_rows:
                writer.writerow([epoch, f"{loss:.6f}", f"{acc:.6f}"])
        extra = {
            "task": report["config"]["task"],
            "feature_set": report["config"]["feature_set"],
            "zscore": report["config"]["zscore"],
            "context": report["config"]["context"],
            "position_feature": art["window"].position_feature,
            "max_frames": art["window"].max_frames,
            "base_dim": art["window"].base_dim,
            "class_names": report["class_names"],
            "seed": report["config"]["seed"],
            "repetition": art["repetition"],
            "fold_id": art["fold"].fold_id,
            "best_epoch": art["result"].best_epoch,
        }
        net.save_checkpoint(art["result"].params, fold_dir / "checkpoint.bin", extra)
