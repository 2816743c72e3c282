"""Clip-level plumbing: audio -> patches, patches -> dictionary, clips -> histograms."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, ManifestEntry, load_wav
from .dictionary import Dictionary, LearnConfig, learn
from .patches import PatchGrid, extract_patches
from .pool import Histogram, pool
from .sparse import LassoParams, encode_all
from .spectrogram import SpectrogramParams, spectrogram

log = logging.getLogger(__name__)


@dataclass
class ClipFeatures:
    clip_id: str
    speaker_id: str
    patches: np.ndarray
    labels: dict = field(default_factory=dict)

    @property
    def n_patches(self) -> int:
        return self.patches.shape[1]


def clip_patches(clip: AudioClip, spec_params: SpectrogramParams, grid: PatchGrid) -> np.ndarray:
    return extract_patches(spectrogram(clip, spec_params), grid).columns


def features_from_entry(entry: ManifestEntry, spec_params: SpectrogramParams,
                        grid: PatchGrid) -> ClipFeatures:
    clip = load_wav(entry.path, entry.clip_id, entry.speaker_id)
    return ClipFeatures(entry.clip_id, entry.speaker_id,
                        clip_patches(clip, spec_params, grid), dict(entry.labels))


def load_features(entries, spec_params: SpectrogramParams, grid: PatchGrid,
                  threads: int = 1) -> tuple[list[ClipFeatures], list[tuple[str, Exception]]]:
    """Featurize every manifest entry; failures are collected, not raised."""

    def one(e):
        try:
            return features_from_entry(e, spec_params, grid), None
        except (OSError, ValueError) as exc:
            return None, (e.clip_id, exc)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        results = list(ex.map(one, entries))
    feats = [f for f, _ in results if f is not None]
    failures = [err for _, err in results if err is not None]
    return feats, failures


def canonical(feats) -> list[ClipFeatures]:
    """Clips in clip_id order so downstream results ignore manifest order."""
    return sorted(feats, key=lambda f: f.clip_id)


def stack_patches(feats) -> np.ndarray:
    feats = canonical(feats)
    if not feats:
        raise ValueError("no clips")
    return np.concatenate([f.patches for f in feats], axis=1)


def learn_dictionary(feats, cfg: LearnConfig, meta: dict | None = None,
                     threads: int | None = None) -> Dictionary:
    feats = canonical(feats)
    info = {"clip_ids": [f.clip_id for f in feats]}
    info.update(meta or {})
    return learn(stack_patches(feats), cfg, meta=info, threads=threads)


def encode_clips(feats, dictionary: Dictionary, lam: float, normalize: bool = False,
                 threads: int | None = None) -> list[Histogram]:
    """Histograms for `feats`, in the order given."""
    feats = list(feats)
    if not feats:
        return []
    digest = dictionary.digest().hex()
    P = np.concatenate([f.patches for f in feats], axis=1)
    C = encode_all(P, dictionary, LassoParams(lam), threads=threads)
    bounds = np.cumsum([0] + [f.n_patches for f in feats])
    return [
        Histogram(pool(C[:, a:b], normalize=normalize), f.clip_id, f.speaker_id,
                  dict(f.labels), digest)
        for f, a, b in zip(feats, bounds[:-1], bounds[1:])
    ]
