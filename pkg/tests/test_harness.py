"""Cross-validation plans, training loop, experiment reports."""

import logging
from types import SimpleNamespace

import numpy as np
import pytest

from prosodynet import harness, net
from prosodynet.corpus import DatasetEntry, WordToken
from prosodynet.errors import (ConfigError, DivergedError, ShapeError,
                               TooFewEntries, TooFewSpeakers)
from prosodynet.features import FeatureTrack
from prosodynet.harness import (Fold, RunConfig, evaluate, majority_baseline,
                                make_kfold, make_loso, run_experiment,
                                train_model)


def fake_entries(counts_by_speaker, genders=None):
    """Lightweight stand-ins carrying only token.speaker_id / token.gender."""
    genders = genders or {}
    entries = []
    for spk, n in counts_by_speaker.items():
        g = genders.get(spk, "female")
        for _ in range(n):
            entries.append(SimpleNamespace(
                token=SimpleNamespace(speaker_id=spk, gender=g)))
    return entries


def check_plan_invariants(plan, n):
    everything = np.arange(n)
    test_union = []
    for fold in plan.folds:
        tr, va, te = fold.train_idx, fold.val_idx, fold.test_idx
        for arr in (tr, va, te):
            assert arr.size > 0
            assert np.all((arr >= 0) & (arr < n))
            assert np.array_equal(np.sort(arr), arr)
        assert len(np.intersect1d(tr, va)) == 0
        assert len(np.intersect1d(tr, te)) == 0
        assert len(np.intersect1d(va, te)) == 0
        test_union.append(te)
    joined = np.sort(np.concatenate(test_union))
    np.testing.assert_array_equal(joined, everything)


# ---------------------------------------------------------------- k-fold

def test_kfold_sizes_exact_split():
    plan = make_kfold(100, k=10, val_size=10, seed=0)
    assert len(plan.folds) == 10
    for fold in plan.folds:
        assert fold.test_idx.size == 10
        assert fold.val_idx.size == 10
        assert fold.train_idx.size == 80
    check_plan_invariants(plan, 100)


def test_kfold_uneven_split():
    plan = make_kfold(101, k=10, val_size=10, seed=3)
    sizes = sorted(fold.test_idx.size for fold in plan.folds)
    assert sizes == [10] * 9 + [11]
    check_plan_invariants(plan, 101)


def test_kfold_same_seed_identical():
    a = make_kfold(57, k=5, val_size=7, seed=11)
    b = make_kfold(57, k=5, val_size=7, seed=11)
    c = make_kfold(57, k=5, val_size=7, seed=12)
    for fa, fb in zip(a.folds, b.folds):
        np.testing.assert_array_equal(fa.train_idx, fb.train_idx)
        np.testing.assert_array_equal(fa.val_idx, fb.val_idx)
        np.testing.assert_array_equal(fa.test_idx, fb.test_idx)
    assert any(not np.array_equal(fa.test_idx, fc.test_idx)
               for fa, fc in zip(a.folds, c.folds))


def test_kfold_rejects_impossible_requests():
    with pytest.raises(TooFewEntries):
        make_kfold(5, k=6, val_size=1, seed=0)
    with pytest.raises(TooFewEntries):
        make_kfold(10, k=1, val_size=1, seed=0)
    with pytest.raises(TooFewEntries):
        make_kfold(10, k=2, val_size=5, seed=0)  # val eats all non-test


def test_kfold_accepts_entry_list():
    entries = fake_entries({"s1": 20})
    plan = make_kfold(entries, k=4, val_size=3, seed=0)
    check_plan_invariants(plan, 20)


def test_kfold_invariants_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(6, 120))
        k = int(rng.integers(2, min(8, n) + 1))
        max_val = n - (n - 1) // k - n // k - 1
        if max_val < 1:
            continue
        val = int(rng.integers(1, max_val + 1))
        plan = make_kfold(n, k=k, val_size=val, seed=int(rng.integers(1 << 31)))
        check_plan_invariants(plan, n)


# ---------------------------------------------------------------- loso

def test_loso_one_fold_per_speaker():
    entries = fake_entries({"f1": 30, "f2": 25, "m1": 40},
                           genders={"f1": "female", "f2": "female", "m1": "male"})
    plan = make_loso(entries, val_size=5, seed=0)
    assert [f.test_speaker for f in plan.folds] == ["f1", "f2", "m1"]
    check_plan_invariants(plan, 95)
    spk = [e.token.speaker_id for e in entries]
    for fold in plan.folds:
        # test block is exactly the speaker's words
        assert all(spk[i] == fold.test_speaker for i in fold.test_idx)
        # training never sees the test speaker
        assert all(spk[i] != fold.test_speaker for i in fold.train_idx)
        assert all(spk[i] != fold.test_speaker for i in fold.val_idx)
        # validation words all come from the designated speaker
        assert all(spk[i] == fold.val_speaker for i in fold.val_idx)


def test_loso_prefers_same_gender_validation():
    entries = fake_entries(
        {"f1": 20, "f2": 20, "f3": 20, "m1": 20, "m2": 20},
        genders={"f1": "female", "f2": "female", "f3": "female",
                 "m1": "male", "m2": "male"})
    gender_of = {"f1": "female", "f2": "female", "f3": "female",
                 "m1": "male", "m2": "male"}
    plan = make_loso(entries, val_size=5, seed=4)
    for fold in plan.folds:
        assert fold.val_speaker != fold.test_speaker
        assert gender_of[fold.val_speaker] == gender_of[fold.test_speaker]


def test_loso_falls_back_across_gender_with_warning(caplog):
    entries = fake_entries({"f1": 10, "m1": 10},
                           genders={"f1": "female", "m1": "male"})
    with caplog.at_level(logging.WARNING):
        plan = make_loso(entries, val_size=3, seed=0)
    assert any("same-gender" in r.message for r in caplog.records)
    for fold in plan.folds:
        assert fold.val_speaker != fold.test_speaker


def test_loso_short_validation_pool_warns(caplog):
    entries = fake_entries({"f1": 10, "f2": 4},
                           genders={"f1": "female", "f2": "female"})
    with caplog.at_level(logging.WARNING):
        plan = make_loso(entries, val_size=50, seed=0)
    assert any("words" in r.message for r in caplog.records)
    fold = plan.folds[0]
    assert fold.val_idx.size == 4


def test_loso_needs_two_speakers():
    with pytest.raises(TooFewSpeakers):
        make_loso(fake_entries({"only": 30}), val_size=3, seed=0)


def test_loso_same_seed_identical():
    entries = fake_entries({"a": 15, "b": 17, "c": 22},
                           genders={"a": "female", "b": "female", "c": "male"})
    p1 = make_loso(entries, val_size=4, seed=9)
    p2 = make_loso(entries, val_size=4, seed=9)
    for f1, f2 in zip(p1.folds, p2.folds):
        assert f1.val_speaker == f2.val_speaker
        np.testing.assert_array_equal(f1.val_idx, f2.val_idx)
        np.testing.assert_array_equal(f1.train_idx, f2.train_idx)


# ---------------------------------------------------------------- metrics

def test_evaluate_perfect_and_confusion():
    rng = np.random.default_rng(0)
    params = net.init_params(2, 2, pool_out=1, n_kernels=3, rng=rng)
    s = net.min_input_width(params)
    X = rng.normal(size=(6, 2, s))
    y = net.predict_batch(X, params)  # label with the model's own predictions
    m = evaluate(params, X, y, 2)
    assert m.accuracy == 1.0
    assert m.n_test == 6
    assert np.trace(m.confusion) == 6
    assert m.confusion.sum() == 6


def test_evaluate_confusion_rows_are_true_labels():
    rng = np.random.default_rng(1)
    params = net.init_params(2, 2, pool_out=1, n_kernels=3, rng=rng)
    s = net.min_input_width(params)
    X = rng.normal(size=(8, 2, s))
    pred = net.predict_batch(X, params)
    y = 1 - pred  # force every prediction wrong
    m = evaluate(params, X, y, 2)
    assert m.accuracy == 0.0
    assert np.trace(m.confusion) == 0
    for i in range(8):
        assert m.confusion[y[i]].sum() >= 1


def test_evaluate_class_mismatch():
    params = net.init_params(2, 3, pool_out=1, n_kernels=3,
                             rng=np.random.default_rng(0))
    X = np.zeros((2, 2, net.min_input_width(params)))
    with pytest.raises(ShapeError):
        evaluate(params, X, np.zeros(2, dtype=np.int64), 2)


def test_majority_baseline_values():
    y = np.zeros(1000, dtype=np.int64)
    y[:221] = 1
    assert majority_baseline(y) == 0.779
    assert majority_baseline(np.asarray([3])) == 1.0
    assert majority_baseline(np.asarray([0, 1, 0, 1])) == 0.5
    with pytest.raises(TooFewEntries):
        majority_baseline(np.asarray([], dtype=np.int64))


def test_majority_baseline_accepts_entries():
    track = FeatureTrack(values=np.zeros((1, 10)), feature_names=("x",),
                         hop_ms=10.0, frame_len_ms=20.0, utterance_id="u")
    tok = WordToken(word="w", start_s=0.0, end_s=0.1, speaker_id="s",
                    utterance_id="u", gender="female")
    entries = [DatasetEntry(token=tok, track=track, start_frame=0, end_frame=5,
                            class_index=c) for c in (0, 0, 1)]
    assert majority_baseline(entries) == pytest.approx(2.0 / 3.0)


# ---------------------------------------------------------------- training

def separable_problem(n=80, d=2, s=30, seed=0):
    """Class 1 windows carry a strong constant offset on feature 0."""
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=0.3, size=(n, d, s))
    y = (np.arange(n) % 2).astype(np.int64)
    X[y == 1, 0, :] += 3.0
    return X, y


def quick_config(**over):
    base = dict(task="pa_detect", feature_set="prosody", context="1w",
                cv="kfold", k=2, val_size=8, epochs=3, repetitions=1,
                batch_size=8, n_kernels=8, seed=0)
    base.update(over)
    return RunConfig(**base)


def fold_over(n, val=8, test=12):
    idx = np.arange(n)
    return Fold(fold_id="fold00", train_idx=idx[: n - val - test],
                val_idx=idx[n - val - test: n - test], test_idx=idx[n - test:])


def test_train_model_learns_separable_data():
    X, y = separable_problem(n=120, seed=1)
    fold = fold_over(120, val=20, test=20)
    cfg = quick_config(epochs=30)
    result = train_model(X, y, fold, cfg, np.random.SeedSequence(0))
    m = evaluate(result.params, X[fold.test_idx], y[fold.test_idx], 2)
    assert m.accuracy >= 0.9
    assert result.best_val_accuracy >= 0.9


def test_train_model_single_epoch():
    X, y = separable_problem(n=60)
    fold = fold_over(60)
    result = train_model(X, y, fold, quick_config(epochs=1),
                         np.random.SeedSequence(1))
    assert result.best_epoch == 1
    assert len(result.log_rows) == 1


def test_train_model_log_shape_and_best_epoch():
    X, y = separable_problem(n=60, seed=2)
    fold = fold_over(60)
    cfg = quick_config(epochs=5)
    result = train_model(X, y, fold, cfg, np.random.SeedSequence(2))
    assert len(result.log_rows) == 5
    assert [r[0] for r in result.log_rows] == [1, 2, 3, 4, 5]
    accs = [r[2] for r in result.log_rows]
    assert result.best_val_accuracy == max(accs)
    # earliest epoch wins ties
    assert result.best_epoch == accs.index(max(accs)) + 1
    assert all(np.isfinite(r[1]) for r in result.log_rows)


def test_train_model_identical_seeds_identical_logs():
    X, y = separable_problem(n=60, seed=3)
    fold = fold_over(60)
    cfg = quick_config(epochs=4)
    r1 = train_model(X, y, fold, cfg, np.random.SeedSequence(7))
    r2 = train_model(X, y, fold, cfg, np.random.SeedSequence(7))
    assert r1.log_rows == r2.log_rows
    for (_, a), (_, b) in zip(r1.params.tensors(), r2.params.tensors()):
        np.testing.assert_array_equal(a, b)
    r3 = train_model(X, y, fold, cfg, np.random.SeedSequence(8))
    assert r1.log_rows != r3.log_rows


def test_train_model_raises_on_nonfinite_loss(monkeypatch):
    X, y = separable_problem(n=60)
    fold = fold_over(60)
    monkeypatch.setattr(harness.net, "batch_cross_entropy",
                        lambda probs, targets: float("nan"))
    with pytest.raises(DivergedError):
        train_model(X, y, fold, quick_config(), np.random.SeedSequence(0))


# ------------------------------------------------------------- experiment

def tiny_corpus(n_utts=6, words_per_utt=6, d=5, seed=0, speakers=("f1", "m2"),
                genders=("female", "male")):
    """Synthetic tokens/labels/tracks with a learnable class-0/1 contrast."""
    from prosodynet.corpus import EventLabel, NO_EVENT, _interval_key

    rng = np.random.default_rng(seed)
    tokens, labels, tracks = [], {}, {}
    for u in range(n_utts):
        spk = speakers[u % len(speakers)]
        gender = genders[u % len(genders)]
        utt = f"{spk}_u{u:02d}"
        n_frames = words_per_utt * 12
        values = rng.normal(scale=0.3, size=(d, n_frames))
        for w in range(words_per_utt):
            start, end = w * 0.12, (w + 1) * 0.12
            accent = (u + w) % 2 == 0
            if accent:
                values[0, w * 12:(w + 1) * 12] += 3.0
            tok = WordToken(word=f"w{w}", start_s=start, end_s=end,
                            speaker_id=spk, utterance_id=utt, gender=gender)
            tokens.append(tok)
            labels[_interval_key(utt, start, end)] = \
                EventLabel("pitch_accent", "H*") if accent else NO_EVENT
        tracks[utt] = FeatureTrack(values=values,
                                   feature_names=tuple(f"x{i}" for i in range(d)),
                                   hop_ms=10.0, frame_len_ms=20.0,
                                   utterance_id=utt)
    return tokens, labels, tracks


def test_run_experiment_report_shape():
    tokens, labels, tracks = tiny_corpus()
    cfg = quick_config(epochs=2, k=3, val_size=5)
    report, artifacts = run_experiment(cfg, tokens, labels, tracks)
    assert report["cv_kind"] == "kfold"
    assert report["n_entries"] == 36
    assert report["class_names"] == ["no_accent", "accent"]
    assert len(report["repetitions"]) == 1
    assert len(report["repetitions"][0]["folds"]) == 3
    assert report["failed_folds"] == []
    assert 0.0 <= report["mean_accuracy"] <= 1.0
    assert len(artifacts) == 3
    conf = np.asarray(report["total_confusion"])
    assert conf.sum() == 36  # every word tested exactly once per repetition


def test_run_experiment_mean_matches_confusions():
    tokens, labels, tracks = tiny_corpus(n_utts=8, seed=4)
    cfg = quick_config(epochs=2, k=4, val_size=6, repetitions=2)
    report, _ = run_experiment(cfg, tokens, labels, tracks)
    for block in report["repetitions"]:
        accs, corrects, totals = [], 0, 0
        for row in block["folds"]:
            conf = np.asarray(row["confusion"])
            acc = np.trace(conf) / conf.sum()
            assert abs(acc - row["accuracy"]) < 1e-12
            accs.append(acc)
            corrects += np.trace(conf)
            totals += conf.sum()
        assert abs(block["mean_accuracy"] - np.mean(accs)) < 1e-12
        assert abs(block["word_weighted_accuracy"] - corrects / totals) < 1e-12
    want = np.mean([b["mean_accuracy"] for b in report["repetitions"]])
    assert abs(report["mean_accuracy"] - want) < 1e-12


def test_run_experiment_loso_report():
    tokens, labels, tracks = tiny_corpus(n_utts=8, seed=5)
    cfg = quick_config(cv="loso", val_size=6, epochs=2)
    report, _ = run_experiment(cfg, tokens, labels, tracks)
    assert report["cv_kind"] == "loso"
    assert sorted(report["per_speaker"]) == ["f1", "m2"]
    for acc in report["per_speaker"].values():
        assert 0.0 <= acc <= 1.0
    assert report["word_weighted_accuracy"] is not None


def test_run_experiment_rejects_bad_config():
    tokens, labels, tracks = tiny_corpus()
    with pytest.raises(ConfigError) as err:
        run_experiment(quick_config(task="typo", epochs=0), tokens, labels, tracks)
    assert len(err.value.problems) == 2


def test_run_experiment_flags_diverged_folds(monkeypatch):
    tokens, labels, tracks = tiny_corpus()
    calls = {"n": 0}
    real = harness.train_model

    def sometimes_diverges(X, y, fold, config, seed_seq):
        calls["n"] += 1
        if calls["n"] == 1:
            raise DivergedError("synthetic divergence")
        return real(X, y, fold, config, seed_seq)

    monkeypatch.setattr(harness, "train_model", sometimes_diverges)
    cfg = quick_config(epochs=1, k=3, val_size=5)
    report, artifacts = run_experiment(cfg, tokens, labels, tracks)
    assert len(report["failed_folds"]) == 1
    rows = report["repetitions"][0]["folds"]
    assert sum(1 for r in rows if r["diverged"]) == 1
    assert report["mean_accuracy"] is not None  # other folds still average
    assert len(artifacts) == 2


def test_run_experiment_deterministic_bytes():
    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=6)
    cfg = quick_config(epochs=2, k=2, val_size=4)
    r1, _ = run_experiment(cfg, tokens, labels, tracks)
    r2, _ = run_experiment(cfg, tokens, labels, tracks)
    assert harness.report_json_bytes(r1) == harness.report_json_bytes(r2)


def test_run_experiment_zscore_path():
    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=7)
    cfg = quick_config(epochs=1, k=2, val_size=4, zscore=True)
    report, _ = run_experiment(cfg, tokens, labels, tracks)
    assert report["config"]["zscore"] is True


def test_run_experiment_parallel_matches_serial():
    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=8)
    cfg = quick_config(epochs=2, k=2, val_size=4)
    serial, _ = run_experiment(cfg, tokens, labels, tracks, jobs=1)
    parallel, _ = run_experiment(cfg, tokens, labels, tracks, jobs=2)
    assert harness.report_json_bytes(serial) == harness.report_json_bytes(parallel)


def test_write_report_files(tmp_path):
    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=9)
    cfg = quick_config(epochs=2, k=2, val_size=4)
    report, artifacts = run_experiment(cfg, tokens, labels, tracks)
    out = tmp_path / "exp"
    harness.write_report_files(report, artifacts, out)

    assert (out / "report.json").is_file()
    assert (out / "report.txt").is_file()
    assert (out / "figures" / "training_curves.png").is_file()
    assert (out / "figures" / "confusion.png").is_file()

    log_path = out / "folds" / "rep0" / "fold00" / "training_log.csv"
    lines = log_path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_accuracy"
    assert len(lines) == 3

    ckpt = out / "folds" / "rep0" / "fold00" / "checkpoint.bin"
    params, header = net.load_checkpoint(ckpt)
    assert header["task"] == "pa_detect"
    assert header["fold_id"] == "fold00"
    assert params.n_classes == 2

    # best checkpoint's recorded val accuracy matches the log's maximum
    row = report["repetitions"][0]["folds"][0]
    accs = [float(line.split(",")[2]) for line in lines[1:]]
    assert abs(row["best_val_accuracy"] - max(accs)) < 1e-6


def test_run_experiment_writes_exclusion_listing(tmp_path):
    from prosodynet.corpus import EventLabel

    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=12)
    changed = 0
    for key, lab in sorted(labels.items()):
        if lab.kind == "pitch_accent" and changed < 2:
            labels[key] = EventLabel("pitch_accent", lab.tobi,
                                     uncertain_event=True)
            changed += 1
    cfg = quick_config(epochs=1, k=2, val_size=4)
    report, artifacts = run_experiment(cfg, tokens, labels, tracks)
    assert report["n_excluded"] == 2
    listing = report["exclusion_report"]
    assert len(listing.strip().split("\n")) == 2
    assert "uncertain" in listing

    out = tmp_path / "exp"
    harness.write_report_files(report, artifacts, out)
    assert (out / "exclusions.tsv").read_text() == listing


def test_render_report_table_mentions_key_numbers():
    tokens, labels, tracks = tiny_corpus(n_utts=4, seed=10)
    cfg = quick_config(epochs=1, k=2, val_size=4)
    report, _ = run_experiment(cfg, tokens, labels, tracks)
    text = harness.render_report_table(report)
    assert "pa_detect" in text
    assert "fold00" in text
    assert f"{report['baseline']:.4f}" in text


def test_resolved_val_size_defaults():
    assert quick_config(val_size=None, cv="kfold").resolved_val_size() == 1000
    assert quick_config(val_size=None, cv="loso").resolved_val_size() == 500
    assert quick_config(val_size=77).resolved_val_size() == 77
