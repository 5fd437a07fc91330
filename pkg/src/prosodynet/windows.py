"""Per-word model input assembly.

Each labeled word becomes a fixed-size (feature rows x padded frames) matrix:
its own frames, or the concatenation [previous word | word | next word] for
three-word context, with trailing zero padding up to the fixed width. An
optional position-indicator row (always the last row) is 1.0 exactly over the
current word's columns so the model can tell the center word apart from its
neighbors.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, FrameRangeError, ShapeError

log = logging.getLogger(__name__)

ONE_WORD = "one_word"
THREE_WORDS = "three_words"

# CLI-facing shorthand for the three context variants.
CONTEXT_ALIASES = {
    "1w": (ONE_WORD, False),
    "3w": (THREE_WORDS, False),
    "3w-pf": (THREE_WORDS, True),
}


@dataclass(frozen=True)
class WindowConfig:
    context: str
    position_feature: bool
    max_frames: int
    base_dim: int

    def __post_init__(self):
        if self.context not in (ONE_WORD, THREE_WORDS):
            raise ValueError(f"context must be {ONE_WORD!r} or {THREE_WORDS!r}")
        if self.position_feature and self.context != THREE_WORDS:
            raise ValueError("position feature requires three-word context")
        if self.max_frames < 1 or self.base_dim < 1:
            raise ValueError("max_frames and base_dim must be positive")

    @property
    def input_dim(self) -> int:
        """Feature rows the model sees: base features + the position row."""
        return self.base_dim + (1 if self.position_feature else 0)


@dataclass
class InputWindow:
    matrix: np.ndarray
    current_span: tuple
    class_index: int


def neighbor_table(entries) -> list:
    """(prev, next) dataset entries for each entry; same utterance only."""
    out = []
    for i, e in enumerate(entries):
        prev = entries[i - 1] if i > 0 else None
        nxt = entries[i + 1] if i + 1 < len(entries) else None
        if prev is not None and prev.token.utterance_id != e.token.utterance_id:
            prev = None
        if nxt is not None and nxt.token.utterance_id != e.token.utterance_id:
            nxt = None
        out.append((prev, nxt))
    return out


def _entry_frames(entry) -> np.ndarray:
    if entry.start_frame < 0 or entry.end_frame > entry.track.n_frames \
            or entry.end_frame <= entry.start_frame:
        raise FrameRangeError(
            f"{entry.token.utterance_id}: frames [{entry.start_frame}, "
            f"{entry.end_frame}) outside track of {entry.track.n_frames}")
    return entry.frames


def assemble_window(entry, neighbors, cfg: WindowConfig) -> InputWindow:
    """Build one padded input matrix; neighbors is a (prev, next) pair.

    Windows longer than cfg.max_frames are truncated around the current
    word (keeping its full span whenever it fits) with a logged warning.
    """
    cur = _entry_frames(entry)
    if cur.shape[0] != cfg.base_dim:
        raise ShapeError(f"track has {cur.shape[0]} features, config says {cfg.base_dim}")

    if cfg.context == ONE_WORD:
        segments = [cur]
        a = 0
    else:
        prev, nxt = neighbors
        segments = []
        if prev is not None:
            segments.append(_entry_frames(prev))
        a = sum(s.shape[1] for s in segments)
        segments.append(cur)
        if nxt is not None:
            segments.append(_entry_frames(nxt))
    b = a + cur.shape[1]
    window = np.concatenate(segments, axis=1)
    length = window.shape[1]

    if length > cfg.max_frames:
        window, a, b = _truncate_centered(window, a, b, cfg.max_frames)
        log.warning("window of %d frames truncated to %d (%s %r)", length,
                    cfg.max_frames, entry.token.utterance_id, entry.token.word)
        length = cfg.max_frames

    matrix = np.zeros((cfg.input_dim, cfg.max_frames))
    matrix[: cfg.base_dim, :length] = window
    if cfg.position_feature:
        matrix[cfg.base_dim, a:b] = 1.0
    return InputWindow(matrix=matrix, current_span=(a, b),
                       class_index=entry.class_index)


def _truncate_centered(window: np.ndarray, a: int, b: int, max_frames: int):
    """Keep max_frames columns centered on [a, b); span survives if it fits."""
    if b - a >= max_frames:
        # Current word alone overflows: keep its central part.
        start = a + (b - a - max_frames) // 2
        return window[:, start:start + max_frames], 0, max_frames
    start = (a + b) // 2 - max_frames // 2
    start = min(max(start, 0), window.shape[1] - max_frames)
    if a < start:
        start = a
    if b > start + max_frames:
        start = b - max_frames
    return window[:, start:start + max_frames], a - start, b - start


def window_length(entry, neighbors, context: str) -> int:
    if context == ONE_WORD:
        return entry.n_frames
    prev, nxt = neighbors
    return (prev.n_frames if prev else 0) + entry.n_frames \
        + (nxt.n_frames if nxt else 0)


def scan_max_frames(entries, context: str) -> int:
    """Longest window over the dataset; this becomes the padded width S."""
    if not entries:
        raise EmptyDataset("cannot size windows over an empty dataset")
    table = neighbor_table(entries)
    return max(window_length(e, nb, context) for e, nb in zip(entries, table))


def assemble_batch(entries, cfg: WindowConfig):
    """All windows of a dataset: (X of shape (n, rows, frames), y of shape (n,))."""
    table = neighbor_table(entries)
    n = len(entries)
    X = np.zeros((n, cfg.input_dim, cfg.max_frames))
    y = np.zeros(n, dtype=np.int64)
    for i, (e, nb) in enumerate(zip(entries, table)):
        w = assemble_window(e, nb, cfg)
        X[i] = w.matrix
        y[i] = w.class_index
    return X, y


def write_window_dump(window: InputWindow, path, utterance_id: str,
                      word_index: int) -> None:
    """Binary f32 matrix plus a JSON sidecar, for inspection/debugging."""
    path = str(path)
    window.matrix.astype("<f4").tofile(path)
    sidecar = {
        "utterance_id": utterance_id,
        "word_index": word_index,
        "span": list(window.current_span),
        "class_index": window.class_index,
        "shape": list(window.matrix.shape),
        "dtype": "<f4",
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_window_dump(path) -> InputWindow:
    path = str(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    flat = np.fromfile(path, dtype="<f4").astype(np.float64)
    matrix = flat.reshape(sidecar["shape"])
    return InputWindow(matrix=matrix, current_span=tuple(sidecar["span"]),
                       class_index=sidecar["class_index"])
