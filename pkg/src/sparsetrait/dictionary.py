"""Non-negative dictionary learning by alternating Lasso coding and atom updates.

Atoms live in ``{d >= 0, ||d||_2 <= 1}``.  With codes fixed, each atom is
updated by exact block coordinate descent on ``0.5 ||P - D C||^2`` followed by
Euclidean projection onto that set; this never increases the objective.

File format (``SPDL``)::

    magic "SPDL" | u32 version=1 | u32 d | u32 m
    | d*m little-endian f64, atom after atom (column-major)
    | u32 n | n bytes UTF-8 JSON meta
"""
from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import Reader, dump_meta, write_array, write_header, write_u32
from .sparse import LassoParams, encode_all, lasso_objective

log = logging.getLogger(__name__)

SPDL_MAGIC = b"SPDL"
SPDL_VERSION = 1

DEFAULT_LAMBDA_GRID = (0.05, 0.1, 0.2, 0.4)


class InsufficientPatchesError(ValueError):
    pass


@dataclass
class Dictionary:
    atoms: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.atoms.shape[0]

    @property
    def m(self) -> int:
        return self.atoms.shape[1]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_header(buf, SPDL_MAGIC, SPDL_VERSION)
        write_u32(buf, self.d, self.m)
        write_array(buf, self.atoms, order="F")
        buf.write(dump_meta(self.meta))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dictionary":
        r = Reader(data, SPDL_MAGIC, "dictionary file")
        if r.version != SPDL_VERSION:
            raise ValueError(f"unsupported dictionary version {r.version}")
        d, m = r.u32(), r.u32()
        atoms = r.array(d * m).reshape((d, m), order="F")
        return cls(np.ascontiguousarray(atoms), r.meta())

    def digest(self) -> bytes:
        """SHA-256 of the serialized file bytes."""
        return hashlib.sha256(self.to_bytes()).digest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dictionary":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class LearnConfig:
    m: int = 200
    lam: float = 0.1
    n_iters: int = 200
    batch: int = 10000
    seed: int = 0
    probe: int = 1000
    trace_every: int = 10

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


def _columns(P) -> np.ndarray:
    P = np.asarray(getattr(P, "columns", P), dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("patch matrix must be 2-D (d x k)")
    return P


def _atoms_of(D) -> np.ndarray:
    return np.asarray(getattr(D, "atoms", D), dtype=np.float64)


def project_atom(v) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, ||x||_2 <= 1}``.

    >>> project_atom([-1.0, 3.0])
    array([0., 1.])
    """
    w = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    n = np.linalg.norm(w)
    if n > 1.0:
        w = w / n
    return w


def init_dictionary(P, cfg: LearnConfig) -> Dictionary:
    """Pick `cfg.m` non-zero patches with distinct directions in seeded random order, scaled to unit norm."""
    P = _columns(P)
    d, k = P.shape
    rng = np.random.default_rng(cfg.seed)
    chosen = []
    seen = set()
    for idx in rng.permutation(k):
        col = np.maximum(P[:, idx], 0.0)
        n = np.linalg.norm(col)
        if n == 0.0:
            continue
        col = col / n
        # patches differing only in scale would give the same atom
        key = col.tobytes()
        if key in seen:
            continue
        seen.add(key)
        chosen.append(col)
        if len(chosen) == cfg.m:
            break
    if len(chosen) < cfg.m:
        raise InsufficientPatchesError(
            f"need {cfg.m} distinct non-zero patches to seed the dictionary, found {len(chosen)}")
    atoms = np.stack(chosen, axis=1)
    return Dictionary(atoms, {"m": cfg.m, "d": d, "seed": cfg.seed, "init": "random_patches"})


def update_atoms(P, C, atoms) -> np.ndarray:
    """One block-coordinate pass over all atoms with codes `C` held fixed.

    Atoms with no support in `C` (zero row) are replaced by the worst
    reconstructed patch of the batch, projected and rescaled to unit norm.
    """
    P = _columns(P)
    C = np.asarray(C, dtype=np.float64)
    D = np.array(atoms, dtype=np.float64, copy=True)
    d, m = D.shape
    if P.shape[0] != d or C.shape != (m, P.shape[1]):
        raise ValueError(
            f"shape mismatch: P {P.shape}, C {C.shape}, D {D.shape}")
    A = C @ C.T
    B = P @ C.T
    dead = []
    for j in range(m):
        ajj = A[j, j]
        if ajj <= 0.0:
            dead.append(j)
            continue
        w = project_atom(D[:, j] + (B[:, j] - D @ A[:, j]) / ajj)
        # an all-zero projection would kill the atom; keeping the old one
        # forgoes this step without increasing the objective
        if w.any():
            D[:, j] = w
    if dead:
        # dead atoms carry no code mass, so replacing them leaves D @ C unchanged
        err = np.sum((P - D @ C) ** 2, axis=0)
        order = np.argsort(-err, kind="stable")
        pos = 0
        for j in dead:
            while pos < order.size:
                w = project_atom(P[:, order[pos]])
                pos += 1
                n = np.linalg.norm(w)
                if n > 0.0:
                    D[:, j] = w / n
                    break
    return D


def dict_update(P, C, D) -> Dictionary:
    meta = dict(getattr(D, "meta", {}))
    return Dictionary(update_atoms(P, C, _atoms_of(D)), meta)


def objective(P, D, lam: float, threads: int | None = None) -> float:
    """Coding objective at the optimal codes for fixed `D`."""
    P = _columns(P)
    C = encode_all(P, D, LassoParams(lam), threads=threads)
    return lasso_objective(P, D, C, lam)


def learn(P, cfg: LearnConfig, meta: dict | None = None, threads: int | None = None) -> Dictionary:
    """Alternate Lasso coding and atom updates over seeded mini-batches.

    When ``cfg.batch >= k`` every iteration uses all patches in their given
    order, which makes a single iteration exactly ``init -> encode -> update``.
    The coding objective on a fixed random probe subset is recorded every
    ``cfg.trace_every`` iterations in ``meta["objective_trace"]``.
    """
    P = _columns(P)
    d, k = P.shape
    if k == 0:
        raise InsufficientPatchesError("no patches to learn from")
    D = init_dictionary(P, cfg).atoms
    rng = np.random.default_rng([cfg.seed, 1])
    probe_idx = np.sort(rng.choice(k, size=min(cfg.probe, k), replace=False))
    probe = P[:, probe_idx]
    params = LassoParams(cfg.lam)
    full = cfg.batch >= k

    trace = []

    def record(it):
        val = lasso_objective(probe, D, encode_all(probe, D, params, threads), cfg.lam)
        trace.append([it, val])
        log.info("iter %d: probe objective %.6g", it, val)

    if cfg.probe > 0:
        record(0)
    for it in range(1, cfg.n_iters + 1):
        if full:
            Pb = P
        else:
            Pb = P[:, np.sort(rng.choice(k, size=cfg.batch, replace=False))]
        Cb = encode_all(Pb, D, params, threads)
        D = update_atoms(Pb, Cb, D)
        if cfg.probe > 0 and (it % cfg.trace_every == 0 or it == cfg.n_iters):
            record(it)

    info = {
        "d": d, "m": cfg.m, "lambda": cfg.lam, "n_iters": cfg.n_iters,
        "batch": cfg.batch, "seed": cfg.seed, "probe": cfg.probe,
        "n_patches": k, "objective_trace": trace,
    }
    info.update(meta or {})
    return Dictionary(D, info)
