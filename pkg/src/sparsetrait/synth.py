"""Synthetic two-class speech-like corpus for end-to-end checks.

Class +1 speakers produce harmonic tones under slow amplitude modulation;
class -1 speakers produce band-limited noise bursts.  Each speaker has its
own fundamental / band so clips vary within a class.  Clips are written as
16-bit mono WAV with the standard-library ``wave`` module.
"""
from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import TRAITS, ManifestEntry, write_manifest


def harmonic_clip(rng, n: int, fs: int, f0: float) -> np.ndarray:
    t = np.arange(n) / fs
    am_rate = rng.uniform(2.0, 5.0)
    am = 0.6 + 0.4 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    vib = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 7) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vib) / fs
    x = np.zeros(n)
    h = 1
    while h * f0 < 0.45 * fs:
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
        h += 1
    x *= am
    x += 0.01 * rng.standard_normal(n)
    return x


def noise_burst_clip(rng, n: int, fs: int, band: tuple[float, float]) -> np.ndarray:
    sos = signal.butter(4, band, btype="bandpass", fs=fs, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(n))
    gate = np.zeros(n)
    pos = int(rng.integers(0, fs // 10))
    while pos < n:
        length = int(rng.uniform(0.05, 0.2) * fs)
        gate[pos:pos + length] = 1.0
        pos += length + int(rng.uniform(0.03, 0.15) * fs)
    # soften the burst edges
    win = np.hanning(max(3, fs // 200))
    gate = np.convolve(gate, win / win.sum(), mode="same")
    return noise * gate + 0.01 * rng.standard_normal(n)


def write_wav16(path, x: np.ndarray, fs: int) -> None:
    pcm = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(fs)
        w.writeframes(pcm.tobytes())


def make_corpus(out_dir, n_speakers: int = 40, clips_per_speaker: int = 4,
                duration: float = 1.0, fs: int = 8000, seed: int = 0) -> Path:
    """Write WAVs plus ``manifest.csv`` under `out_dir`; returns the manifest path.

    Speakers alternate between the two classes; every trait column carries
    the class label.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    entries = []
    for s in range(n_speakers):
        label = 1 if s % 2 == 0 else -1
        f0 = rng.uniform(90.0, 260.0)
        lo = rng.uniform(400.0, 1500.0)
        band = (lo, min(lo + rng.uniform(600.0, 1800.0), 0.45 * fs))
        for c in range(clips_per_speaker):
            if label > 0:
                x = harmonic_clip(rng, n, fs, f0 * rng.uniform(0.95, 1.05))
            else:
                x = noise_burst_clip(rng, n, fs, band)
            x = 0.8 * x / np.max(np.abs(x))
            cid = f"spk{s:03d}_c{c}"
            path = out / "wav" / f"{cid}.wav"
            write_wav16(path, x, fs)
            entries.append(ManifestEntry(cid, f"spk{s:03d}", path, {t: label for t in TRAITS}))
    manifest = out / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest
