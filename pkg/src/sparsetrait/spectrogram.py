"""Magnitude spectrograms with per-frame max normalization."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .container import Reader, dump_meta, write_array, write_header, write_u32

SPGM_MAGIC = b"SPGM"
SPGM_VERSION = 1


class ClipTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrogramParams:
    window_len: int = 128
    hop: int = 32
    window: str = "hamming"

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if not 0 < self.hop <= self.window_len:
            raise ValueError("hop must satisfy 0 < hop <= window_len")
        if self.window != "hamming":
            raise ValueError(f"unsupported window: {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    """``values`` has shape (n_bins, n_frames): one column per time frame."""

    values: np.ndarray
    params: SpectrogramParams = field(default_factory=SpectrogramParams)
    clip_id: str = ""
    normalized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window, 0.54 - 0.46 cos(2 pi k / (n - 1))."""
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Overlapping frames of `x` as a (n_frames, window_len) view; the tail is dropped."""
    n_frames = (x.size - window_len) // hop + 1
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, window_len), strides=(x.strides[0] * hop, x.strides[0]),
        writeable=False)


def stft_magnitude(clip: AudioClip, params: SpectrogramParams | None = None) -> Spectrogram:
    params = params or SpectrogramParams()
    x = np.ascontiguousarray(clip.samples, dtype=np.float64)
    if x.size < params.window_len:
        raise ClipTooShortError(
            f"clip {clip.clip_id!r} has {x.size} samples, fewer than window_len={params.window_len}")
    frames = frame_signal(x, params.window_len, params.hop) * hamming(params.window_len)
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    return Spectrogram(np.ascontiguousarray(mag), params, clip.clip_id, normalized=False)


def normalize(spec: Spectrogram) -> Spectrogram:
    """Divide every time frame (column) by its maximum; zero frames stay zero."""
    v = spec.values
    peak = v.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    out = v / safe
    # exact 1.0 at the peak, immune to rounding in the division above
    out[v.argmax(axis=0)[peak > 0], np.nonzero(peak > 0)[0]] = 1.0
    return replace(spec, values=out, normalized=True)


def spectrogram(clip: AudioClip, params: SpectrogramParams | None = None) -> Spectrogram:
    return normalize(stft_magnitude(clip, params))


def spgm_bytes(spec: Spectrogram, meta: dict | None = None) -> bytes:
    import io

    buf = io.BytesIO()
    write_header(buf, SPGM_MAGIC, SPGM_VERSION)
    rows, cols = spec.values.shape
    write_u32(buf, rows, cols)
    write_array(buf, spec.values, order="C")
    info = {"clip_id": spec.clip_id, "normalized": spec.normalized,
            "window_len": spec.params.window_len, "hop": spec.params.hop,
            "window": spec.params.window}
    info.update(meta or {})
    buf.write(dump_meta(info))
    return buf.getvalue()


def save_spectrogram(path, spec: Spectrogram, meta: dict | None = None) -> None:
    Path(path).write_bytes(spgm_bytes(spec, meta))


def load_spectrogram(path) -> Spectrogram:
    r = Reader(Path(path).read_bytes(), SPGM_MAGIC, "spectrogram dump")
    rows, cols = r.u32(), r.u32()
    values = r.array(rows * cols).reshape(rows, cols)
    meta = r.meta(optional=True)
    params = SpectrogramParams(meta.get("window_len", 128), meta.get("hop", 32),
                               meta.get("window", "hamming"))
    return Spectrogram(values, params, meta.get("clip_id", ""), meta.get("normalized", False))
