"""Deterministic synthetic corpus with planted prosodic events.

Each utterance is a sequence of voiced harmonic words separated by silence.
Speakers alternate gender (f01, m02, ...) and draw a base f0 from the
gender's half of the configured range; f0 declines 10% linearly over the
utterance. Accented words get a class-specific f0 excursion template plus
a 2x amplitude boost; the utterance-final word may instead carry a boundary
tone realized over its second half. With probability distractor_rate an
unaccented word receives a partial f0 bump and no energy boost, and stays
unlabeled: context windows then contain prominence that does not belong to
the word in the middle.

Everything derives from the seed; regeneration is byte-identical.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .corpus import ACCENT_CLASS_NAMES, BOUNDARY_CLASS_NAMES
from .errors import ConfigError

N_HARMONICS = 5
HARMONIC_AMP = 0.20
ACCENT_GAIN = 2.0
DISTRACTOR_SCALE = 0.6
DECLINATION = 0.10
F0_FLOOR_HZ = 108.0
EDGE_RAMP_MS = 5.0
LEAD_PAUSE_MS = 60.0


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 5
    n_utterances_per_speaker: int = 60
    words_per_utterance: tuple = (7, 11)
    word_len_ms: tuple = (180.0, 320.0)
    accent_rate: float = 0.5
    boundary_rate: float = 0.6
    speaker_f0_base: tuple = (160.0, 260.0)
    event_f0_excursion: tuple = (35.0, 60.0)
    noise_level: float = 0.01
    distractor_rate: float = 0.3
    pause_ms: tuple = (30.0, 80.0)
    sample_rate: int = 16000
    seed: int = 0

    def validate(self) -> list:
        problems = []
        if self.n_speakers < 1:
            problems.append(f"n_speakers must be >= 1, got {self.n_speakers}")
        if self.n_utterances_per_speaker < 1:
            problems.append("n_utterances_per_speaker must be >= 1")
        for name in ("accent_rate", "boundary_rate", "distractor_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name} must be in [0, 1], got {v}")
        for name in ("words_per_utterance", "word_len_ms", "speaker_f0_base",
                     "event_f0_excursion", "pause_ms"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                problems.append(f"{name} range must satisfy lo < hi, got ({lo}, {hi})")
        if self.noise_level < 0:
            problems.append(f"noise_level must be >= 0, got {self.noise_level}")
        if self.sample_rate < 8000:
            problems.append(f"sample_rate must be >= 8000, got {self.sample_rate}")
        # Deepest planted contour: declination plus a 0.20*base boundary
        # fall; it must stay above the tracker floor to remain audible.
        lo = self.speaker_f0_base[0]
        if lo * (1.0 - DECLINATION - 0.20) < F0_FLOOR_HZ:
            problems.append(f"speaker_f0_base low end {lo} leaves boundary falls "
                            f"below the {F0_FLOOR_HZ} Hz tracking floor")
        return problems


@dataclass
class SynthCorpus:
    audio: dict
    alignments_tsv: str
    labels_tsv: str
    manifest: dict


def _cos_bump(u: np.ndarray, center: float, width: float) -> np.ndarray:
    """Raised cosine: 1 at center, 0 outside [center - w/2, center + w/2]."""
    inside = np.abs(u - center) < width / 2.0
    out = np.zeros_like(u)
    out[inside] = 0.5 + 0.5 * np.cos(2.0 * np.pi * (u[inside] - center) / width)
    return out


def _ramp(u: np.ndarray, start: float, width: float) -> np.ndarray:
    return np.clip((u - start) / width, 0.0, 1.0)


def accent_template(class_index: int, u: np.ndarray) -> np.ndarray:
    """Per-class f0 excursion shape over normalized word time, unit = one
    excursion. Shapes are caricatures chosen to be mutually separable and
    to raise the word's mean f0."""
    if class_index == 0:    # single broad mid peak
        return 1.32 * _cos_bump(u, 0.50, 1.00)
    if class_index == 1:    # early dip, broad late peak
        return -0.30 * _cos_bump(u, 0.15, 0.30) + 1.76 * _cos_bump(u, 0.62, 0.75)
    if class_index == 2:    # sharp late peak
        return 0.22 * _cos_bump(u, 0.30, 0.60) + 2.42 * _cos_bump(u, 0.75, 0.50)
    if class_index == 3:    # dip, shoulder, sharp final rise
        return (-0.33 * _cos_bump(u, 0.25, 0.40) + 1.10 * _cos_bump(u, 0.55, 0.50)
                + 2.20 * _cos_bump(u, 0.80, 0.40))
    if class_index == 4:    # early high peak falling to a lower shoulder
        return 1.76 * _cos_bump(u, 0.22, 0.45) + 0.99 * _cos_bump(u, 0.60, 0.50)
    raise ValueError(f"accent class index out of range: {class_index}")


def boundary_template(class_index: int, u: np.ndarray) -> np.ndarray:
    """Boundary-tone shape over normalized word time, unit = one base f0.
    Realized over the final half of the word."""
    if class_index == 0:    # deep final fall
        return -0.20 * _ramp(u, 0.5, 0.5)
    if class_index == 1:    # fall then terminal rise
        return -0.20 * _cos_bump(u, 0.60, 0.35) + 0.18 * _ramp(u, 0.80, 0.20)
    if class_index == 2:    # rise then level
        return 0.16 * _ramp(u, 0.50, 0.15)
    if class_index == 3:    # small rise-fall
        return 0.10 * _cos_bump(u, 0.70, 0.50)
    if class_index == 4:    # high terminal rise
        return 0.26 * _ramp(u, 0.5, 0.5) ** 2
    raise ValueError(f"boundary class index out of range: {class_index}")


def _speaker_roster(spec: SynthSpec) -> list:
    """(speaker_id, gender, base_f0) with alternating genders."""
    lo, hi = spec.speaker_f0_base
    mid = 0.5 * (lo + hi)
    roster = []
    for i in range(spec.n_speakers):
        gender = "female" if i % 2 == 0 else "male"
        prefix = "f" if gender == "female" else "m"
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7, i]))
        base = rng.uniform(mid, hi) if gender == "female" else rng.uniform(lo, mid)
        roster.append((f"{prefix}{i + 1:02d}", gender, float(base)))
    return roster


def _word_signal(n: int, sample_rate: int, f0_contour: np.ndarray,
                 gain: float) -> np.ndarray:
    phase = 2.0 * np.pi * np.cumsum(f0_contour) / sample_rate
    sig = np.zeros(n)
    for h in range(1, N_HARMONICS + 1):
        sig += (HARMONIC_AMP / h) * np.sin(h * phase)
    ramp_n = max(1, int(round(EDGE_RAMP_MS / 1000.0 * sample_rate)))
    env = np.ones(n)
    edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
    env[:ramp_n] = np.minimum(env[:ramp_n], edge)
    env[-ramp_n:] = np.minimum(env[-ramp_n:], edge[::-1])
    return sig * gain * env


def _generate_utterance(spec: SynthSpec, rng, base_f0: float):
    """Returns (samples, word rows). Each row: (start_idx, end_idx, accent
    class or None, boundary class or None, distractor flag)."""
    sr = spec.sample_rate
    n_words = int(rng.integers(spec.words_per_utterance[0],
                               spec.words_per_utterance[1] + 1))
    word_ns = [int(round(rng.uniform(*spec.word_len_ms) / 1000.0 * sr))
               for _ in range(n_words)]
    pause_ns = [int(round(rng.uniform(*spec.pause_ms) / 1000.0 * sr))
                for _ in range(n_words - 1)]
    lead = int(round(LEAD_PAUSE_MS / 1000.0 * sr))

    has_boundary = rng.random() < spec.boundary_rate
    boundary_class = int(rng.integers(len(BOUNDARY_CLASS_NAMES) - 1)) \
        if has_boundary else None
    plan = []
    for w in range(n_words):
        final_boundary = has_boundary and w == n_words - 1
        accent = None
        distractor = False
        if not final_boundary:
            if rng.random() < spec.accent_rate:
                accent = int(rng.integers(len(ACCENT_CLASS_NAMES) - 1))
            elif rng.random() < spec.distractor_rate:
                distractor = True
        plan.append((accent, boundary_class if final_boundary else None, distractor))

    total = lead + sum(word_ns) + sum(pause_ns) + lead
    samples = np.zeros(total)
    rows = []
    pos = lead
    utt_len = float(total)
    for w, n in enumerate(word_ns):
        accent, boundary, distractor = plan[w]
        u = (np.arange(n) + 0.5) / n
        t_global = (pos + np.arange(n)) / utt_len
        contour = base_f0 * (1.0 - DECLINATION * t_global)
        excursion = rng.uniform(*spec.event_f0_excursion)
        if accent is not None:
            contour = contour + excursion * accent_template(accent, u)
        elif distractor:
            contour = contour + DISTRACTOR_SCALE * excursion * _cos_bump(u, 0.5, 1.0)
        if boundary is not None:
            contour = contour + base_f0 * boundary_template(boundary, u)
        contour = np.maximum(contour, F0_FLOOR_HZ)
        gain = ACCENT_GAIN if accent is not None else 1.0
        samples[pos:pos + n] = _word_signal(n, sr, contour, gain)
        rows.append((pos, pos + n, accent, boundary, distractor))
        pos += n
        if w < n_words - 1:
            pos += pause_ns[w]
    if spec.noise_level > 0:
        samples = samples + spec.noise_level * rng.standard_normal(total)
    return np.clip(samples, -1.0, 1.0), rows


def generate_corpus(spec: SynthSpec) -> SynthCorpus:
    """Audio plus alignment/label TSV text for the whole corpus."""
    problems = spec.validate()
    if problems:
        raise ConfigError(problems)
    audio = {}
    align_lines = []
    label_lines = []
    for spk_idx, (speaker, gender, base_f0) in enumerate(_speaker_roster(spec)):
        for utt_idx in range(spec.n_utterances_per_speaker):
            utt_id = f"{speaker}_u{utt_idx:03d}"
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed, spk_idx, utt_idx]))
            samples, rows = _generate_utterance(spec, rng, base_f0)
            audio[utt_id] = AudioBuffer(samples=samples,
                                        sample_rate=spec.sample_rate)
            for w, (a, b, accent, boundary, _) in enumerate(rows):
                start = a / spec.sample_rate
                end = b / spec.sample_rate
                align_lines.append(f"{utt_id}\t{speaker}\t{gender}\tw{w:02d}\t"
                                   f"{start:.4f}\t{end:.4f}")
                if accent is not None:
                    kind, tobi = "pitch_accent", ACCENT_CLASS_NAMES[accent]
                elif boundary is not None:
                    kind, tobi = "boundary_tone", BOUNDARY_CLASS_NAMES[boundary]
                else:
                    kind, tobi = "none", ""
                label_lines.append(f"{utt_id}\t{start:.4f}\t{end:.4f}\t{kind}\t"
                                   f"{tobi}\t0\t0")
    manifest = {"spec": dataclasses.asdict(spec),
                "n_utterances": len(audio),
                "n_words": len(align_lines)}
    return SynthCorpus(audio=audio,
                       alignments_tsv="\n".join(align_lines) + "\n",
                       labels_tsv="\n".join(label_lines) + "\n",
                       manifest=manifest)


def write_corpus(corpus: SynthCorpus, out_dir) -> None:
    """wav/<utterance>.wav + alignments.tsv + labels.tsv + manifest.json."""
    out = Path(out_dir)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    for utt_id in sorted(corpus.audio):
        write_wav(wav_dir / f"{utt_id}.wav", corpus.audio[utt_id])
    (out / "alignments.tsv").write_text(corpus.alignments_tsv, encoding="utf-8")
    (out / "labels.tsv").write_text(corpus.labels_tsv, encoding="utf-8")
    (out / "manifest.json").write_text(
        json.dumps(corpus.manifest, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
