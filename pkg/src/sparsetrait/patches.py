"""Dense patch extraction from spectrogram images.

A p x p patch whose top-left pixel sits at (frequency f0, frame t0) is
flattened frequency-major: pixel (f, t) of the patch lands at index ``f * p + t``.
Only fully in-bounds windows are taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectrogram import Spectrogram


class SpectrogramTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int = 16
    stride_time: int = 8
    stride_freq: int = 4

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.stride_time < 1 or self.stride_freq < 1:
            raise ValueError("strides must be >= 1")

    @property
    def dim(self) -> int:
        return self.patch_size * self.patch_size

    def positions(self, n_bins: int, n_frames: int) -> tuple[int, int]:
        p = self.patch_size
        if n_bins < p or n_frames < p:
            return 0, 0
        return (n_bins - p) // self.stride_freq + 1, (n_frames - p) // self.stride_time + 1


@dataclass(frozen=True)
class PatchMatrix:
    """``columns`` is d x k; ``origins[i]`` is (freq_offset, time_offset, clip_id)."""

    columns: np.ndarray
    origins: tuple = ()

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    @classmethod
    def concat(cls, mats) -> "PatchMatrix":
        mats = list(mats)
        if not mats:
            raise ValueError("nothing to concatenate")
        cols = np.concatenate([m.columns for m in mats], axis=1)
        origins = tuple(o for m in mats for o in m.origins)
        return cls(cols, origins)


def extract_patches(spec: Spectrogram, grid: PatchGrid | None = None) -> PatchMatrix:
    grid = grid or PatchGrid()
    S = np.ascontiguousarray(spec.values, dtype=np.float64)
    n_bins, n_frames = S.shape
    nf, nt = grid.positions(n_bins, n_frames)
    if nf == 0:
        raise SpectrogramTooSmallError(
            f"spectrogram {spec.clip_id!r} of shape {S.shape} is smaller than one "
            f"{grid.patch_size}x{grid.patch_size} patch")
    p = grid.patch_size
    windows = np.lib.stride_tricks.sliding_window_view(S, (p, p))
    windows = windows[::grid.stride_freq, ::grid.stride_time][:nf, :nt]
    # (nf, nt, p, p) -> (p*p, nf*nt), frequency offset varying slowest
    cols = np.ascontiguousarray(windows.reshape(nf * nt, p * p).T)
    origins = tuple((i * grid.stride_freq, j * grid.stride_time, spec.clip_id)
                    for i in range(nf) for j in range(nt))
    return PatchMatrix(cols, origins)
