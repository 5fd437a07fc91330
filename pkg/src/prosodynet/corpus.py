"""Corpus ingestion: word alignments, ToBI event labels, task label schemes.

Input contract is two TSV files. Alignments:

    utterance_id TAB speaker_id TAB gender TAB word TAB start_s TAB end_s

Labels (joined to words by utterance id + interval identity):

    utterance_id TAB start_s TAB end_s TAB kind TAB tobi TAB uncertain_event TAB uncertain_type

where kind is one of pitch_accent / boundary_tone / none and the two
uncertainty flags are 0/1. Words flagged uncertain_event are excluded from
every task; uncertain_type excludes only from the classification tasks.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (AlignmentFormatError, AlignmentOverlap, BadInterval,
                     MissingAudio, MissingLabel, UnknownLabel)
from .features import FeatureTrack


class _Excluded:
    """Singleton marker returned by map_label for words dropped from a task."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXCLUDED"


EXCLUDED = _Excluded()

GENDERS = ("female", "male")
GENDER_ALIASES = {"f": "female", "m": "male", "female": "female", "male": "male"}
LABEL_KINDS = ("pitch_accent", "boundary_tone", "none")
TASKS = ("pa_detect", "pa_classify", "pb_detect", "pb_classify")

# Raw ToBI inventory accepted in label files. Downstepped accents fold into
# their plain counterparts; bare phrase accents carry no intonational
# boundary and therefore count as "none" for the boundary tasks.
ACCENT_CLASS_OF = {
    "H*": 0, "!H*": 0,
    "L*": 1,
    "L+H*": 2, "L+!H*": 2,
    "L*+H": 3, "L*+!H": 3,
    "H+!H*": 4,
}
ACCENT_CLASS_NAMES = ("H*", "L*", "L+H*", "L*+H", "H+!H*", "none")
BOUNDARY_CLASS_OF = {
    "L-L%": 0, "L-H%": 1, "H-L%": 2, "!H-L%": 3, "H-H%": 4,
}
BOUNDARY_CLASS_NAMES = ("L-L%", "L-H%", "H-L%", "!H-L%", "H-H%", "none")
INTERMEDIATE_ONLY = frozenset({"L-", "H-", "!H-"})


@dataclass(frozen=True)
class WordToken:
    word: str
    start_s: float
    end_s: float
    speaker_id: str
    utterance_id: str
    gender: str

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise BadInterval(f"{self.utterance_id} {self.word!r}: "
                              f"[{self.start_s}, {self.end_s})")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")


@dataclass(frozen=True)
class EventLabel:
    kind: str
    tobi: str = ""
    uncertain_event: bool = False
    uncertain_type: bool = False

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"kind must be one of {LABEL_KINDS}, got {self.kind!r}")
        if self.kind == "none" and self.tobi:
            raise ValueError("kind 'none' requires an empty tobi label")


NO_EVENT = EventLabel(kind="none")


@dataclass(frozen=True)
class LabelScheme:
    """One of the four word-level tasks and its ordered class list."""

    task: str
    classes: tuple

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def none_index(self) -> int:
        return len(self.classes) - 1 if self.task.endswith("classify") else 0


def make_scheme(task: str) -> LabelScheme:
    if task == "pa_detect":
        return LabelScheme(task, ("no_accent", "accent"))
    if task == "pa_classify":
        return LabelScheme(task, ACCENT_CLASS_NAMES)
    if task == "pb_detect":
        return LabelScheme(task, ("no_boundary", "boundary"))
    if task == "pb_classify":
        return LabelScheme(task, BOUNDARY_CLASS_NAMES)
    raise ValueError(f"task must be one of {TASKS}, got {task!r}")


def _event_class(label: EventLabel, scheme: LabelScheme):
    """Typed class index for the scheme's event kind, or none_index."""
    accent_task = scheme.task.startswith("pa")
    want_kind = "pitch_accent" if accent_task else "boundary_tone"
    if label.kind != want_kind:
        return None
    if accent_task:
        idx = ACCENT_CLASS_OF.get(label.tobi)
        if idx is None:
            raise UnknownLabel([label.tobi])
        return idx
    if label.tobi in INTERMEDIATE_ONLY:
        return None
    idx = BOUNDARY_CLASS_OF.get(label.tobi)
    if idx is None:
        raise UnknownLabel([label.tobi])
    return idx


def validate_tobi(label: EventLabel) -> None:
    """Reject labels whose tobi text is outside the known inventory."""
    if label.kind == "pitch_accent" and label.tobi not in ACCENT_CLASS_OF:
        raise UnknownLabel([label.tobi])
    if label.kind == "boundary_tone" and label.tobi not in BOUNDARY_CLASS_OF \
            and label.tobi not in INTERMEDIATE_ONLY:
        raise UnknownLabel([label.tobi])


def map_label(label: EventLabel, scheme: LabelScheme):
    """Class index for one word under a task scheme, or EXCLUDED.

    Detection tasks collapse every event of the scheme's kind to class 1.
    Words with an uncertain event are excluded from every task; uncertain
    type excludes only from the classification tasks.
    """
    validate_tobi(label)
    if label.uncertain_event:
        return EXCLUDED
    if label.uncertain_type and scheme.task.endswith("classify"):
        return EXCLUDED
    typed = _event_class(label, scheme)
    if scheme.task.endswith("detect"):
        return 1 if typed is not None else 0
    return typed if typed is not None else scheme.none_index


def parse_alignments(stream) -> list:
    """Parse alignment TSV into time-ordered WordTokens grouped by utterance."""
    tokens_by_utt = {}
    problems = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            problems.append((lineno, f"expected 6 tab-separated fields, got {len(parts)}"))
            continue
        utt, speaker, gender, word, start_txt, end_txt = parts
        try:
            start_s, end_s = float(start_txt), float(end_txt)
        except ValueError:
            problems.append((lineno, f"non-numeric interval {start_txt!r}..{end_txt!r}"))
            continue
        if gender not in GENDER_ALIASES:
            problems.append((lineno, f"gender must be female/male (or f/m), got {gender!r}"))
            continue
        gender = GENDER_ALIASES[gender]
        if not (0 <= start_s < end_s):
            raise BadInterval(f"line {lineno}: [{start_s}, {end_s})")
        tokens_by_utt.setdefault(utt, []).append(
            WordToken(word=word, start_s=start_s, end_s=end_s, speaker_id=speaker,
                      utterance_id=utt, gender=gender))
    if problems:
        raise AlignmentFormatError(problems)

    out = []
    for utt, toks in tokens_by_utt.items():
        toks.sort(key=lambda t: (t.start_s, t.end_s))
        for prev, cur in zip(toks, toks[1:]):
            if cur.start_s < prev.end_s - 1e-9:
                raise AlignmentOverlap(
                    f"{utt}: {prev.word!r} [{prev.start_s}, {prev.end_s}) overlaps "
                    f"{cur.word!r} [{cur.start_s}, {cur.end_s})")
        out.extend(toks)
    return out


def _interval_key(utterance_id: str, start_s: float, end_s: float):
    return (utterance_id, round(start_s * 1e6), round(end_s * 1e6))


def parse_labels(stream) -> dict:
    """Parse label TSV into {(utterance, start, end) -> EventLabel}."""
    labels = {}
    problems = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            problems.append((lineno, f"expected 7 tab-separated fields, got {len(parts)}"))
            continue
        utt, start_txt, end_txt, kind, tobi, ue_txt, ut_txt = parts
        try:
            start_s, end_s = float(start_txt), float(end_txt)
        except ValueError:
            problems.append((lineno, f"non-numeric interval {start_txt!r}..{end_txt!r}"))
            continue
        if kind not in LABEL_KINDS:
            problems.append((lineno, f"kind must be one of {LABEL_KINDS}, got {kind!r}"))
            continue
        if ue_txt not in ("0", "1") or ut_txt not in ("0", "1"):
            problems.append((lineno, "uncertainty flags must be 0 or 1"))
            continue
        key = _interval_key(utt, start_s, end_s)
        if key in labels:
            problems.append((lineno, f"duplicate label for {utt} [{start_txt}, {end_txt})"))
            continue
        labels[key] = EventLabel(kind=kind, tobi=tobi,
                                 uncertain_event=ue_txt == "1",
                                 uncertain_type=ut_txt == "1")
    if problems:
        raise AlignmentFormatError(problems)
    return labels


@dataclass
class DatasetEntry:
    """One labeled word: its token, covering track, and frame range."""

    token: WordToken
    track: FeatureTrack
    start_frame: int
    end_frame: int
    class_index: int

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def frames(self) -> np.ndarray:
        return self.track.values[:, self.start_frame:self.end_frame]


@dataclass(frozen=True)
class Exclusion:
    token: WordToken
    reason: str


def word_frame_range(token: WordToken, track: FeatureTrack):
    """[start, end) frame indices of a word, clipped, never empty.

    Frame index boundaries use a 1e-9 fuzz so e.g. 0.25 s / 10 ms maps to
    frame 25 despite 0.25/0.01 rounding up in binary.
    """
    hop_s = track.hop_ms / 1000.0
    a = int(math.floor(token.start_s / hop_s + 1e-9))
    b = int(math.ceil(token.end_s / hop_s - 1e-9))
    a = max(0, min(a, track.n_frames - 1))
    b = max(a + 1, min(b, track.n_frames))
    return a, b


def build_dataset(tokens, labels, tracks, scheme: LabelScheme):
    """Join tokens, labels, and feature tracks into task dataset entries.

    Returns (entries, exclusions). Tokens with no covering track raise
    MissingAudio, tokens without a label record raise MissingLabel, and
    unknown ToBI labels raise one aggregated UnknownLabel. Excluded words
    (uncertainty flags) are reported, never silently dropped.
    """
    entries, exclusions = [], []
    missing_audio, missing_label, unknown = [], [], []
    for token in tokens:
        track = tracks.get(token.utterance_id)
        if track is None:
            missing_audio.append(token.utterance_id)
            continue
        label = labels.get(_interval_key(token.utterance_id, token.start_s, token.end_s))
        if label is None:
            missing_label.append(f"{token.utterance_id}:{token.word}"
                                 f"[{token.start_s:.4f},{token.end_s:.4f})")
            continue
        try:
            cls = map_label(label, scheme)
        except UnknownLabel as err:
            unknown.extend(err.labels)
            continue
        if cls is EXCLUDED:
            reason = "uncertain_event" if label.uncertain_event else "uncertain_type"
            exclusions.append(Exclusion(token=token, reason=reason))
            continue
        a, b = word_frame_range(token, track)
        entries.append(DatasetEntry(token=token, track=track, start_frame=a,
                                    end_frame=b, class_index=cls))
    if unknown:
        raise UnknownLabel(sorted(set(unknown)))
    if missing_audio:
        raise MissingAudio("no feature track for utterance(s): "
                           + ", ".join(sorted(set(missing_audio))))
    if missing_label:
        raise MissingLabel("no label record for: " + ", ".join(missing_label))
    return entries, exclusions


def write_exclusion_report(exclusions, stream) -> None:
    """One tab-separated line per excluded word with its reason."""
    for exc in exclusions:
        t = exc.token
        stream.write(f"{t.utterance_id}\t{t.word}\t{t.start_s:.4f}\t"
                     f"{t.end_s:.4f}\t{exc.reason}\n")


def class_distribution(entries, scheme: LabelScheme) -> np.ndarray:
    counts = np.zeros(scheme.n_classes, dtype=np.int64)
    for e in entries:
        counts[e.class_index] += 1
    return counts


def zscore_per_speaker(tracks: dict, speaker_by_utterance: dict) -> dict:
    """Z-score each feature dimension per speaker over all that speaker's frames.

    Population standard deviation; dimensions with zero spread map to 0.
    Returns a new dict of new tracks; inputs are left untouched.
    """
    by_speaker = {}
    for utt_id in tracks:
        spk = speaker_by_utterance[utt_id]
        by_speaker.setdefault(spk, []).append(utt_id)

    out = {}
    for spk, utt_ids in by_speaker.items():
        joined = np.concatenate([tracks[u].values for u in utt_ids], axis=1)
        mu = joined.mean(axis=1, keepdims=True)
        sigma = joined.std(axis=1, keepdims=True)
        safe = np.where(sigma > 0, sigma, 1.0)
        for u in utt_ids:
            t = tracks[u]
            z = (t.values - mu) / safe
            z[(sigma == 0).ravel(), :] = 0.0
            out[u] = FeatureTrack(values=z, feature_names=t.feature_names,
                                  hop_ms=t.hop_ms, frame_len_ms=t.frame_len_ms,
                                  utterance_id=t.utterance_id)
    return out


def speaker_map(tokens) -> dict:
    """utterance_id -> speaker_id, validated consistent across tokens."""
    out = {}
    for t in tokens:
        prev = out.setdefault(t.utterance_id, t.speaker_id)
        if prev != t.speaker_id:
            raise ValueError(f"utterance {t.utterance_id} claims speakers "
                             f"{prev} and {t.speaker_id}")
    return out


def gender_map(tokens) -> dict:
    """speaker_id -> gender, validated consistent across tokens."""
    out = {}
    for t in tokens:
        prev = out.setdefault(t.speaker_id, t.gender)
        if prev != t.gender:
            raise ValueError(f"speaker {t.speaker_id} claims genders "
                             f"{prev} and {t.gender}")
    return out
