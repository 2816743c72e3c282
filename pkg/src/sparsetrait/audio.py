"""WAV ingestion and manifest parsing.

Only uncompressed RIFF/WAVE is understood: 8/16/32-bit integer PCM and IEEE
float (32 or 64 bit).  No resampling happens here; the header sample rate is
carried through unchanged.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAITS = ("O", "C", "E", "A", "N")

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    """The RIFF structure is broken (bad magic, missing chunks, truncation)."""


class UnsupportedEncodingError(WavError):
    """The file is a valid WAV but not in an encoding we decode."""


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""
    speaker_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if np.any(np.abs(samples) > 1.0):
            raise ValueError("samples must lie in [-1, 1]")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _decode(data: bytes, fmt_tag: int, bits: int, channels: int) -> np.ndarray:
    width = bits // 8
    frame = width * channels
    n_frames = len(data) // frame
    data = data[: n_frames * frame]
    if fmt_tag == _FORMAT_PCM:
        if bits == 8:
            x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 32:
            x = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2147483648.0
        else:
            raise UnsupportedEncodingError(f"unsupported PCM bit depth: {bits}")
    elif fmt_tag == _FORMAT_FLOAT:
        if bits == 32:
            x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(data, dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedEncodingError(f"unsupported float bit depth: {bits}")
        if not np.all(np.isfinite(x)):
            raise MalformedWavError("non-finite float samples")
        x = np.clip(x, -1.0, 1.0)
    else:
        raise UnsupportedEncodingError(f"unsupported WAV format tag 0x{fmt_tag:04x}")
    return x.reshape(n_frames, channels)


def parse_wav(raw: bytes, clip_id: str = "", speaker_id: str = "") -> AudioClip:
    """Decode WAV bytes into a mono :class:`AudioClip`."""
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError("missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        size = struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError("fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedWavError("truncated WAVE_FORMAT_EXTENSIBLE chunk")
                sub = struct.unpack("<H", body[24:26])[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise MalformedWavError("data chunk truncated")
            data = body
            if fmt is not None:
                break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError("no fmt chunk")
    if data is None:
        raise MalformedWavError("no data chunk")
    fmt_tag, channels, rate, _, _, bits = fmt
    if channels < 1 or rate < 1 or bits < 1:
        raise MalformedWavError("invalid fmt fields")
    if bits % 8:
        raise UnsupportedEncodingError(f"unsupported bit depth: {bits}")
    frames = _decode(data, fmt_tag, bits, channels)
    if frames.shape[0] == 0:
        raise MalformedWavError("no sample frames")
    mono = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    return AudioClip(mono, rate, clip_id, speaker_id)


def load_wav(path, clip_id: str | None = None, speaker_id: str = "") -> AudioClip:
    """Load a PCM or float WAV file, downmixing to mono by channel mean.

    Integer samples are divided by ``2 ** (bits - 1)`` (8-bit data is offset
    by 128 first), so +32767 in a 16-bit file becomes 32767/32768.

    Raises
    ------
    FileNotFoundError
        `path` does not exist.
    MalformedWavError
        The RIFF container is broken.
    UnsupportedEncodingError
        Compressed or otherwise unsupported sample encoding.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    raw = path.read_bytes()
    if clip_id is None:
        clip_id = path.stem
    return parse_wav(raw, clip_id, speaker_id)


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    speaker_id: str
    path: Path
    labels: dict = field(default_factory=dict)


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``clip_id,speaker_id,path,label_O,...,label_N`` (header required).

    Relative audio paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    required = ["clip_id", "speaker_id", "path"] + [f"label_{t}" for t in TRAITS]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError("manifest is empty (no header row)")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"manifest header missing columns: {missing}")
        entries = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            labels = {}
            for t in TRAITS:
                try:
                    v = int(row[f"label_{t}"])
                except (TypeError, ValueError):
                    raise ManifestError(f"line {lineno}: label_{t} is not an integer") from None
                if v not in (1, -1):
                    raise ManifestError(f"line {lineno}: label_{t} must be +1 or -1")
                labels[t] = v
            cid = row["clip_id"]
            if cid in seen:
                raise ManifestError(f"line {lineno}: duplicate clip_id {cid!r}")
            seen.add(cid)
            p = Path(row["path"])
            if not p.is_absolute():
                p = base / p
            entries.append(ManifestEntry(cid, row["speaker_id"], p, labels))
    return entries


def write_manifest(path, entries) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "speaker_id", "path"] + [f"label_{t}" for t in TRAITS])
        for e in entries:
            p = e.path
            try:
                p = Path(os.path.relpath(p, path.parent))
            except ValueError:
                pass
            w.writerow([e.clip_id, e.speaker_id, p.as_posix()] + [e.labels[t] for t in TRAITS])
