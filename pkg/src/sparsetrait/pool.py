"""Sum-of-absolute-codes pooling and histogram set files.

Histogram sets are stored either as CSV (one trait's labels per file)::

    clip_id,speaker_id,label,b0,...,b_{m-1}

or in the binary ``SPHS`` container, laid out like the dictionary file::

    magic "SPHS" | u32 version=1 | u32 n | u32 m
    | n*m little-endian f64, histogram after histogram
    | u32 len | UTF-8 JSON meta (clip_ids, speaker_ids, labels, dictionary digest, ...)
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import Reader, dump_meta, write_array, write_header, write_u32

SPHS_MAGIC = b"SPHS"
SPHS_VERSION = 1


@dataclass
class Histogram:
    bins: np.ndarray
    clip_id: str = ""
    speaker_id: str = ""
    labels: dict = field(default_factory=dict)
    dictionary_digest: str | None = None

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 1:
            raise ValueError("histogram bins must be 1-D")

    @property
    def m(self) -> int:
        return self.bins.shape[0]


def pool(codes, normalize: bool = False) -> np.ndarray:
    """Sum of absolute codes.

    `codes` is either a sequence of equal-length code vectors or an m x k
    matrix whose columns are codes.  With ``normalize=True`` the result is
    scaled to unit l1 norm (zero histograms stay zero).
    """
    if isinstance(codes, np.ndarray) and codes.ndim == 2:
        C = codes
        if C.shape[1] == 0:
            raise ValueError("cannot pool an empty set of codes")
    else:
        vecs = [np.asarray(getattr(c, "values", c), dtype=np.float64) for c in codes]
        if not vecs:
            raise ValueError("cannot pool an empty set of codes")
        m = vecs[0].shape
        if any(v.shape != m or v.ndim != 1 for v in vecs):
            raise ValueError("all codes must be 1-D vectors of the same length")
        C = np.stack(vecs, axis=1)
    h = np.abs(C).sum(axis=1)
    if normalize:
        s = h.sum()
        if s > 0:
            h = h / s
    return h


def write_csv(path, hists: Sequence[Histogram], trait: str) -> None:
    m = hists[0].m if hists else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "speaker_id", "label"] + [f"b{i}" for i in range(m)])
        for h in hists:
            label = h.labels.get(trait, "")
            w.writerow([h.clip_id, h.speaker_id, label] + [repr(float(b)) for b in h.bins])


def read_csv(path, trait: str = "") -> list[Histogram]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["clip_id", "speaker_id", "label"]:
            raise ValueError(f"{path}: not a histogram CSV")
        for row in reader:
            labels = {trait: int(row[2])} if row[2] != "" else {}
            out.append(Histogram(np.array([float(x) for x in row[3:]]), row[0], row[1], labels))
    return out


def sphs_bytes(hists: Sequence[Histogram], meta: dict | None = None) -> bytes:
    n = len(hists)
    m = hists[0].m if n else 0
    if any(h.m != m for h in hists):
        raise ValueError("histograms differ in length")
    digests = {h.dictionary_digest for h in hists}
    if len(digests) > 1:
        raise ValueError("histograms were produced with different dictionaries")
    buf = io.BytesIO()
    write_header(buf, SPHS_MAGIC, SPHS_VERSION)
    write_u32(buf, n, m)
    if n:
        write_array(buf, np.stack([h.bins for h in hists]), order="C")
    info = {
        "clip_ids": [h.clip_id for h in hists],
        "speaker_ids": [h.speaker_id for h in hists],
        "labels": [h.labels for h in hists],
        "dictionary_digest": digests.pop() if digests else None,
    }
    info.update(meta or {})
    buf.write(dump_meta(info))
    return buf.getvalue()


def save_histograms(path, hists: Sequence[Histogram], meta: dict | None = None) -> None:
    Path(path).write_bytes(sphs_bytes(hists, meta))


def load_histograms(path) -> tuple[list[Histogram], dict]:
    r = Reader(Path(path).read_bytes(), SPHS_MAGIC, "histogram file")
    n, m = r.u32(), r.u32()
    H = r.array(n * m).reshape(n, m)
    meta = r.meta()
    digest = meta.get("dictionary_digest")
    hists = [Histogram(H[i].copy(), meta["clip_ids"][i], meta["speaker_ids"][i],
                       dict(meta["labels"][i]), digest) for i in range(n)]
    return hists, meta
