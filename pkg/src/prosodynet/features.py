"""Frame-based acoustic feature extraction.

Two feature sets are produced from 20ms/10ms framed audio: a 5-feature
prosody set (smoothed f0, RMS energy, loudness, voicing probability,
harmonics-to-noise ratio) and a 27-band log Mel-spectrum set.

The f0 tracker is a normalized cross-correlation (NCCF) peak picker with
parabolic interpolation. Because a 20 ms frame cannot hold two periods of
a 50 Hz tone, the effective pitch floor is raised to 2 * sr / frame_len
when the frame is too short for the nominal floor.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SignalTooShort
from .audio import AudioBuffer

PROSODY_FEATURE_NAMES = ("f0_smoothed", "rms_energy", "loudness", "voicing_prob", "hnr")
N_MEL_FILTERS = 27

F0_MIN_HZ = 50.0
F0_MAX_HZ = 600.0
VOICING_THRESHOLD = 0.45
HNR_CLAMP_DB = 40.0
MEL_LOG_EPS = 1e-10


@dataclass(frozen=True)
class FrameSpec:
    """Analysis framing: frame length and hop, both in milliseconds."""

    frame_len_ms: float = 20.0
    hop_ms: float = 10.0

    def __post_init__(self):
        if not (self.frame_len_ms >= self.hop_ms > 0):
            raise ValueError(f"need frame_len_ms >= hop_ms > 0, got {self}")

    def frame_len_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass
class FeatureTrack:
    """Per-frame feature matrix for one utterance, shape (d, s)."""

    values: np.ndarray
    feature_names: tuple
    hop_ms: float
    frame_len_ms: float
    utterance_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.feature_names):
            raise ValueError("values must be (d, s) with d == len(feature_names)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature track contains NaN/inf")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_count(num_samples: int, sample_rate: int, spec: FrameSpec) -> int:
    """Number of full frames available from a signal of the given length."""
    flen = spec.frame_len_samples(sample_rate)
    hop = spec.hop_samples(sample_rate)
    if num_samples < flen:
        raise SignalTooShort(f"{num_samples} samples < one {flen}-sample frame")
    return (num_samples - flen) // hop + 1


def frame_signal(samples: np.ndarray, sample_rate: int, spec: FrameSpec) -> np.ndarray:
    """Slice a signal into overlapping frames, shape (n_frames, frame_len)."""
    flen = spec.frame_len_samples(sample_rate)
    hop = spec.hop_samples(sample_rate)
    n = frame_count(samples.size, sample_rate, spec)
    view = np.lib.stride_tricks.sliding_window_view(samples, flen)
    return np.ascontiguousarray(view[:: hop][:n])


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def _nccf_frames(frames: np.ndarray, sample_rate: int, f_min: float, f_max: float):
    """Normalized cross-correlation per frame over the pitch lag range.

    Returns (nccf matrix (n, n_lags), lag_min). Frames are expected
    mean-subtracted. NCCF(tau) = sum x[n]x[n+tau] / sqrt(e0(tau) e1(tau))
    with e0/e1 the energies of the leading/trailing overlap segments.
    """
    n_frames, flen = frames.shape
    # Raise the floor so at least two periods fit in the frame.
    f_min_eff = max(f_min, 2.0 * sample_rate / flen)
    lag_min = max(2, int(math.ceil(sample_rate / f_max)))
    lag_max = min(int(math.floor(sample_rate / f_min_eff)), flen // 2)
    if lag_max < lag_min:
        return np.zeros((n_frames, 0)), lag_min

    nfft = _next_pow2(2 * flen)
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : lag_max + 1]

    csum = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    total = csum[:, -1:]
    lags = np.arange(lag_min, lag_max + 1)
    e_head = csum[:, flen - lags]          # energy of x[0 .. flen-1-tau]
    e_tail = total - csum[:, lags]         # energy of x[tau .. flen-1]
    denom = np.sqrt(e_head * e_tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        nccf = np.where(denom > 0, acf[:, lag_min:] / denom, 0.0)
    return nccf, lag_min


def _pick_f0(nccf: np.ndarray, lag_min: int, sample_rate: int, f_min: float,
             f_max: float, voicing_threshold: float):
    """Peak-pick each frame's NCCF: returns (f0, voicing_prob, peak_r) arrays."""
    n_frames, n_lags = nccf.shape
    f0 = np.zeros(n_frames)
    vprob = np.zeros(n_frames)
    peak_r = np.zeros(n_frames)
    if n_lags == 0:
        return f0, vprob, peak_r

    rows = np.arange(n_frames)
    best0 = np.argmax(nccf, axis=1)
    r_best0 = nccf[rows, best0]

    # Lag quantization can leave the 2T (or 3T, 4T) peak marginally above
    # the true-period peak. When a sub-multiple of the winning lag
    # correlates within 0.01 of the maximum, take the shortest such lag;
    # for non-periodic sub-multiples the correlation collapses, so this
    # only undoes octave halving.
    best = best0.copy()
    for k in (2, 3, 4):
        cand = np.round((best0 + lag_min) / k).astype(np.int64) - lag_min
        ok = (cand >= 0) & (cand < best0)
        if not np.any(ok):
            continue
        c = np.clip(cand, 0, n_lags - 1)
        lo = np.maximum(c - 1, 0)
        hi = np.minimum(c + 1, n_lags - 1)
        r_neigh = np.stack([nccf[rows, lo], nccf[rows, c], nccf[rows, hi]])
        which = np.argmax(r_neigh, axis=0)
        r_sub = r_neigh[which, rows]
        j_sub = np.choose(which, [lo, c, hi])
        take = ok & (r_sub >= r_best0 - 1e-2)
        best = np.where(take, j_sub, best)
    r_best = nccf[rows, best]

    # Parabolic interpolation around the peak where neighbors exist.
    lag = best.astype(np.float64) + lag_min
    r_interp = r_best.copy()
    inner = (best > 0) & (best < n_lags - 1)
    if np.any(inner):
        rm = nccf[rows[inner], best[inner] - 1]
        r0 = nccf[rows[inner], best[inner]]
        rp = nccf[rows[inner], best[inner] + 1]
        denom = rm - 2.0 * r0 + rp
        delta = np.where(np.abs(denom) > 1e-12, 0.5 * (rm - rp) / denom, 0.0)
        delta = np.clip(delta, -0.5, 0.5)
        lag[inner] = best[inner] + lag_min + delta
        r_interp[inner] = r0 - 0.25 * (rm - rp) * delta

    flen_half_floor = lag_min + n_lags - 1
    lag = np.clip(lag, sample_rate / f_max, flen_half_floor)
    peak_r = np.clip(r_interp, 0.0, 1.0)
    vprob = peak_r.copy()
    voiced = peak_r >= voicing_threshold
    f0[voiced] = sample_rate / lag[voiced]
    return f0, vprob, peak_r


def _hnr_db(peak_r: np.ndarray) -> np.ndarray:
    """Harmonics-to-noise ratio from the normalized correlation peak."""
    r = np.clip(peak_r, 0.0, 1.0 - 1e-12)
    with np.errstate(divide="ignore"):
        hnr = 10.0 * np.log10(np.where(r > 0, r / (1.0 - r), 1e-300))
    return np.clip(hnr, -HNR_CLAMP_DB, HNR_CLAMP_DB)


def estimate_f0(frame: np.ndarray, sample_rate: int, f_min: float = F0_MIN_HZ,
                f_max: float = F0_MAX_HZ,
                voicing_threshold: float = VOICING_THRESHOLD):
    """Estimate (f0 Hz, voicing probability, HNR dB) for one sample window.

    Unvoiced frames (correlation peak below the voicing threshold) return
    f0 = 0. An all-zero frame returns (0, 0, -40 dB).
    """
    frame = np.asarray(frame, dtype=np.float64)
    frame = frame - frame.mean()
    # tolerance, not exact zero: mean removal leaves float residue
    if np.max(np.abs(frame)) < 1e-12:
        return 0.0, 0.0, -HNR_CLAMP_DB
    nccf, lag_min = _nccf_frames(frame[None, :], sample_rate, f_min, f_max)
    f0, vprob, peak_r = _pick_f0(nccf, lag_min, sample_rate, f_min, f_max,
                                 voicing_threshold)
    hnr = _hnr_db(peak_r)
    return float(f0[0]), float(vprob[0]), float(hnr[0])


def octave_correct(f0: np.ndarray) -> np.ndarray:
    """Fold halving/doubling outliers back toward the voiced-track median."""
    out = f0.copy()
    voiced = out > 0
    if not np.any(voiced):
        return out
    med = np.median(out[voiced])
    high = voiced & (out > 1.8 * med)
    low = voiced & (out < 0.55 * med)
    out[high] *= 0.5
    out[low] *= 2.0
    return out


def median_smooth(track: np.ndarray, width: int = 5) -> np.ndarray:
    """Running median with edge replication; length preserved."""
    if track.size == 0 or width <= 1:
        return track.copy()
    half = width // 2
    padded = np.pad(track, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return np.median(windows, axis=1)


def smooth_f0(raw_f0: np.ndarray) -> np.ndarray:
    """Octave-jump correction followed by a 5-point running median."""
    return median_smooth(octave_correct(np.asarray(raw_f0, dtype=np.float64)))


def prosody_features(audio: AudioBuffer, spec: FrameSpec = FrameSpec(),
                     utterance_id: str = "") -> FeatureTrack:
    """Extract the 5-feature prosody set for every frame of an utterance.

    Feature order: f0_smoothed, rms_energy, loudness, voicing_prob, hnr.
    Loudness is the Steven's-law intensity approximation (mean power)^0.3.
    """
    frames = frame_signal(audio.samples, audio.sample_rate, spec)
    power = np.mean(frames * frames, axis=1)
    rms = np.sqrt(power)
    loudness = power ** 0.3

    centered = frames - frames.mean(axis=1, keepdims=True)
    silent = np.max(np.abs(centered), axis=1) < 1e-12
    nccf, lag_min = _nccf_frames(centered, audio.sample_rate, F0_MIN_HZ, F0_MAX_HZ)
    f0_raw, vprob, peak_r = _pick_f0(nccf, lag_min, audio.sample_rate,
                                     F0_MIN_HZ, F0_MAX_HZ, VOICING_THRESHOLD)
    f0_raw[silent] = 0.0
    vprob[silent] = 0.0
    peak_r[silent] = 0.0
    hnr = _hnr_db(peak_r)

    values = np.stack([smooth_f0(f0_raw), rms, loudness, vprob, hnr])
    return FeatureTrack(values=values, feature_names=PROSODY_FEATURE_NAMES,
                        hop_ms=spec.hop_ms, frame_len_ms=spec.frame_len_ms,
                        utterance_id=utterance_id)


def hz_to_mel(f: float) -> float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: float) -> float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, sample_rate: int, nfft: int):
    """Triangular filters with centers uniform on the Mel scale.

    Edges/centers are snapped to FFT bins, so each filter's weight is
    exactly 1 at its center bin and 0 from the neighbor's center outward.
    Returns (weights (n_filters, nfft//2 + 1), center_bins).
    """
    mel_points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.round(hz_points * nfft / sample_rate).astype(int)
    # Keep bin centers strictly increasing even for tiny FFT sizes.
    for i in range(1, bins.size):
        if bins[i] <= bins[i - 1]:
            bins[i] = bins[i - 1] + 1
    if bins[-1] > nfft // 2:
        raise ValueError("FFT too small for the requested Mel filter count")

    weights = np.zeros((n_filters, nfft // 2 + 1))
    for k in range(n_filters):
        left, center, right = bins[k], bins[k + 1], bins[k + 2]
        rise = np.arange(left, center + 1)
        weights[k, rise] = (rise - left) / (center - left)
        fall = np.arange(center, right + 1)
        weights[k, fall] = (right - fall) / (right - center)
        weights[k, center] = 1.0
    return weights, bins[1:-1]


def mel_features(audio: AudioBuffer, spec: FrameSpec = FrameSpec(),
                 utterance_id: str = "") -> FeatureTrack:
    """27-band log Mel-spectrum features per frame (Hann window)."""
    frames = frame_signal(audio.samples, audio.sample_rate, spec)
    flen = frames.shape[1]
    nfft = _next_pow2(flen)
    window = np.hanning(flen)
    mag = np.abs(np.fft.rfft(frames * window, nfft, axis=1))
    weights, _ = mel_filterbank(N_MEL_FILTERS, audio.sample_rate, nfft)
    energies = mag @ weights.T
    values = np.log(energies + MEL_LOG_EPS).T
    names = tuple(f"mel_{k:02d}" for k in range(N_MEL_FILTERS))
    return FeatureTrack(values=values, feature_names=names, hop_ms=spec.hop_ms,
                        frame_len_ms=spec.frame_len_ms, utterance_id=utterance_id)


def combined_features(audio: AudioBuffer, spec: FrameSpec = FrameSpec(),
                      utterance_id: str = "") -> FeatureTrack:
    """Prosody and Mel sets concatenated (d = 32)."""
    pros = prosody_features(audio, spec, utterance_id)
    mel = mel_features(audio, spec, utterance_id)
    return FeatureTrack(values=np.vstack([pros.values, mel.values]),
                        feature_names=pros.feature_names + mel.feature_names,
                        hop_ms=spec.hop_ms, frame_len_ms=spec.frame_len_ms,
                        utterance_id=utterance_id)


FEATURE_SETS = {
    "prosody": prosody_features,
    "mel": mel_features,
    "prosody_mel": combined_features,
}


def extract_features(audio: AudioBuffer, feature_set: str,
                     spec: FrameSpec = FrameSpec(),
                     utterance_id: str = "") -> FeatureTrack:
    """Dispatch to one of the named feature sets: prosody, mel, prosody_mel."""
    try:
        fn = FEATURE_SETS[feature_set]
    except KeyError:
        raise ValueError(f"unknown feature set {feature_set!r}") from None
    return fn(audio, spec, utterance_id)


def write_feature_csv(track: FeatureTrack, path) -> None:
    """CSV with header utterance_id,frame_idx,<names...>, 6 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utterance_id,frame_idx," + ",".join(track.feature_names) + "\n")
        for i in range(track.n_frames):
            row = ",".join(f"{v:.6g}" for v in track.values[:, i])
            fh.write(f"{track.utterance_id},{i},{row}\n")


def read_feature_csv(path) -> FeatureTrack:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        names = tuple(header[2:])
        rows, utt = [], ""
        for line in fh:
            parts = line.rstrip("\n").split(",")
            utt = parts[0]
            rows.append([float(v) for v in parts[2:]])
    return FeatureTrack(values=np.asarray(rows).T, feature_names=names,
                        hop_ms=10.0, frame_len_ms=20.0, utterance_id=utt)


def write_feature_binary(track: FeatureTrack, path) -> None:
    """Little-endian f32 matrix (row-major d x s) plus a JSON sidecar."""
    path = str(path)
    track.values.astype("<f4").tofile(path)
    sidecar = {
        "utterance_id": track.utterance_id,
        "n_features": track.n_features,
        "n_frames": track.n_frames,
        "feature_names": list(track.feature_names),
        "hop_ms": track.hop_ms,
        "frame_len_ms": track.frame_len_ms,
        "dtype": "<f4",
        "layout": "row-major (features, frames)",
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_feature_binary(path) -> FeatureTrack:
    path = str(path)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    flat = np.fromfile(path, dtype="<f4").astype(np.float64)
    values = flat.reshape(sidecar["n_features"], sidecar["n_frames"])
    return FeatureTrack(values=values, feature_names=tuple(sidecar["feature_names"]),
                        hop_ms=sidecar["hop_ms"], frame_len_ms=sidecar["frame_len_ms"],
                        utterance_id=sidecar["utterance_id"])
