"""Mono WAV input/output and the in-memory audio container."""

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: float samples in [-1, 1] plus the sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioBuffer requires a non-empty 1-D sample array")
        if self.sample_rate < 8000:
            raise ValueError(f"sample_rate {self.sample_rate} Hz < 8000 Hz minimum")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> AudioBuffer:
    """Load a mono WAV file (PCM 16-bit or float32) as an AudioBuffer."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples=samples, sample_rate=int(rate))


def write_wav(path, audio: AudioBuffer) -> None:
    """Write an AudioBuffer as 16-bit PCM WAV."""
    clipped = np.clip(audio.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(path, audio.sample_rate, pcm)
