"""Binary SVM on histograms with the exponential chi-squared kernel.

The dual is solved by SMO with maximal-violating-pair selection on a
precomputed kernel matrix.  Positive samples get box ``cost * pos_weight``,
negative samples ``cost``.

Model file (``SPSV``, little-endian)::

    magic "SPSV" | u32 version=1 | u8 trait (ASCII) | f64 gamma | f64 bias
    | f64 cost | f64 pos_weight | u32 n_sv | u32 m
    | n_sv f64 dual coefficients (alpha_i * y_i)
    | n_sv*m f64 support histograms, row after row
    | 32 bytes dictionary digest (SHA-256 of the dictionary file, zeros if unbound)
    | u32 len | UTF-8 JSON meta
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import Reader, dump_meta, write_array, write_f64, write_header, write_u32

SPSV_MAGIC = b"SPSV"
SPSV_VERSION = 1

TAU = 1e-12
DEFAULT_COSTS = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_SCALES = (2.0 ** -8, 2.0 ** -6, 2.0 ** -4, 2.0 ** -2, 1.0)


class DigestMismatchError(ValueError):
    """Model and histograms/dictionary do not belong together."""


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    gamma: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be finite and > 0")


def _bins(h) -> np.ndarray:
    return np.asarray(getattr(h, "bins", h), dtype=np.float64)


def _matrix(H) -> np.ndarray:
    if isinstance(H, np.ndarray):
        X = np.asarray(H, dtype=np.float64)
        return X[None, :] if X.ndim == 1 else X
    return np.stack([_bins(h) for h in H]) if len(H) else np.zeros((0, 0))


def chi2_distance(g, h) -> float:
    """sum_i (g_i - h_i)^2 / (g_i + h_i), with 0/0 terms counted as 0."""
    g, h = _bins(g), _bins(h)
    if g.shape != h.shape:
        raise ValueError(f"histogram lengths differ: {g.shape} vs {h.shape}")
    if (g < 0).any() or (h < 0).any():
        raise ValueError("histogram bins must be non-negative")
    s = g + h
    nz = s > 0
    diff = g[nz] - h[nz]
    return float(np.sum(diff * diff / s[nz]))


def chi2_matrix(X, Y=None, chunk: int = 64) -> np.ndarray:
    """Pairwise chi-squared distances between rows of `X` and rows of `Y`."""
    X = _matrix(X)
    sym = Y is None
    Y = X if sym else _matrix(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"histogram lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    if (X < 0).any() or (Y < 0).any():
        raise ValueError("histogram bins must be non-negative")
    out = np.empty((X.shape[0], Y.shape[0]))
    for start in range(0, X.shape[0], chunk):
        A = X[start:start + chunk, None, :]
        s = A + Y[None, :, :]
        diff = A - Y[None, :, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(s > 0, diff * diff / np.where(s > 0, s, 1.0), 0.0)
        out[start:start + chunk] = t.sum(axis=2)
    if sym:
        out = 0.5 * (out + out.T)
        np.fill_diagonal(out, 0.0)
    return out


def kernel(g, h, params: KernelParams) -> float:
    return float(np.exp(-params.gamma * chi2_distance(g, h)))


def kernel_matrix(X, Y=None, params: KernelParams = KernelParams()) -> np.ndarray:
    return np.exp(-params.gamma * chi2_matrix(X, Y))


def median_distance(X) -> float:
    """Median off-diagonal chi-squared distance; 1.0 when degenerate."""
    Dm = chi2_matrix(X)
    iu = np.triu_indices(Dm.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(Dm[iu]))
    return med if med > 0 else 1.0


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    grad: np.ndarray
    n_iter: int

    def objective(self, K, y) -> float:
        v = self.alpha * y
        return 0.5 * float(v @ K @ v) - float(self.alpha.sum())


def solve_dual(K, y, box, tol: float = 1e-3, max_iter: int | None = None) -> DualSolution:
    """SMO for ``min 0.5 a^T Q a - sum(a)``, ``y^T a = 0``, ``0 <= a_i <= box_i``.

    Stops when the maximal KKT violation ``max_{I_up} -y G - min_{I_low} -y G``
    drops below `tol`.  Non-positive curvature along a pair is replaced by
    ``TAU`` so indefinite kernels still make progress.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    box = np.broadcast_to(np.asarray(box, dtype=np.float64), (n,)).copy()
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    Q = K * np.outer(y, y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    while it < max_iter:
        v = -y * G
        up = np.where(pos, alpha < box, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < box)
        if not up.any() or not low.any():
            break
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        if vu[i] - vl[j] < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        Ci, Cj = box[i], box[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            else:
                if ni < 0:
                    ni, nj = 0.0, -diff
            if diff > Ci - Cj:
                if ni > Ci:
                    ni, nj = Ci, Ci - diff
            else:
                if nj > Cj:
                    nj, ni = Cj, Cj + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > Ci:
                if ni > Ci:
                    ni, nj = Ci, total - Ci
            else:
                if nj < 0:
                    nj, ni = 0.0, total
            if total > Cj:
                if nj > Cj:
                    nj, ni = Cj, total - Cj
            else:
                if ni < 0:
                    ni, nj = 0.0, total
        alpha[i], alpha[j] = ni, nj
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)

    yG = y * G
    at_ub = alpha >= box
    at_lb = alpha <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_set = (at_ub & ~pos) | (at_lb & pos)
        lb_set = (at_ub & pos) | (at_lb & ~pos)
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(
            ub if np.isfinite(ub) else lb)
    return DualSolution(alpha, -rho, G, it)


@dataclass
class TraitModel:
    support_histograms: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    kernel: KernelParams
    cost: float
    pos_weight: float
    trait: str = "O"
    dictionary_digest: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_sv(self) -> int:
        return self.dual_coefs.size

    def decision_function(self, H) -> np.ndarray:
        X = _matrix(H)
        if X.shape[1] != self.support_histograms.shape[1]:
            raise ValueError(
                f"histogram length {X.shape[1]} does not match model ({self.support_histograms.shape[1]})")
        Kx = kernel_matrix(X, self.support_histograms, self.kernel)
        return Kx @ self.dual_coefs + self.bias

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_header(buf, SPSV_MAGIC, SPSV_VERSION)
        buf.write(self.trait.encode("ascii")[:1])
        write_f64(buf, self.kernel.gamma, self.bias, self.cost, self.pos_weight)
        n_sv, m = self.support_histograms.shape
        write_u32(buf, n_sv, m)
        write_array(buf, self.dual_coefs)
        write_array(buf, self.support_histograms, order="C")
        buf.write(bytes.fromhex(self.dictionary_digest) if self.dictionary_digest else bytes(32))
        buf.write(dump_meta(self.meta))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TraitModel":
        r = Reader(data, SPSV_MAGIC, "model file")
        if r.version != SPSV_VERSION:
            raise ValueError(f"unsupported model version {r.version}")
        trait = r.raw(1).decode("ascii")
        gamma, bias, cost, pos_weight = r.f64(), r.f64(), r.f64(), r.f64()
        n_sv, m = r.u32(), r.u32()
        coefs = r.array(n_sv)
        sv = r.array(n_sv * m).reshape(n_sv, m)
        digest = r.raw(32)
        meta = r.meta()
        return cls(sv, coefs, bias, KernelParams(gamma), cost, pos_weight, trait,
                   None if digest == bytes(32) else digest.hex(), meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TraitModel":
        return cls.from_bytes(Path(path).read_bytes())


def class_weight(y) -> float:
    """n_neg / n_pos, the default multiplier on the positive-class cost."""
    y = np.asarray(y)
    n_pos = int(np.sum(y > 0))
    n_neg = int(np.sum(y < 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("training data must contain both classes")
    return n_neg / n_pos


def train(H, y, cost: float = 1.0, params: KernelParams = KernelParams(),
          pos_weight: float | None = None, trait: str = "O",
          dictionary_digest: str | None = None, tol: float = 1e-3,
          sv_threshold: float = 1e-12, meta: dict | None = None) -> TraitModel:
    """Fit a weighted soft-margin SVM on histograms `H` with labels `y` in {+1, -1}."""
    X = _matrix(H)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.size:
        raise ValueError("number of histograms and labels differ")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    default_weight = class_weight(y)
    if pos_weight is None:
        pos_weight = default_weight
    if not cost > 0 or not pos_weight > 0:
        raise ValueError("cost and pos_weight must be positive")
    box = np.where(y > 0, cost * pos_weight, cost)
    K = kernel_matrix(X, None, params)
    sol = solve_dual(K, y, box, tol=tol)
    sv = sol.alpha > sv_threshold
    return TraitModel(
        support_histograms=X[sv].copy(),
        dual_coefs=(sol.alpha * y)[sv],
        bias=sol.bias,
        kernel=params,
        cost=float(cost),
        pos_weight=float(pos_weight),
        trait=trait,
        dictionary_digest=dictionary_digest,
        meta=dict(meta or {}, n_train=int(y.size), n_iter=sol.n_iter),
    )


def _check_digest(model: TraitModel, digest) -> None:
    if digest is not None and model.dictionary_digest is not None and digest != model.dictionary_digest:
        raise DigestMismatchError(
            "histogram was encoded with a different dictionary than the model was trained on")


def predict(model: TraitModel, h) -> tuple[int, float]:
    """Label (+1/-1) and decision value for one histogram; a value of exactly 0 maps to +1."""
    _check_digest(model, getattr(h, "dictionary_digest", None))
    value = float(model.decision_function(_bins(h))[0])
    return (1 if value >= 0 else -1), value


def predict_many(model: TraitModel, H, digest=None) -> tuple[np.ndarray, np.ndarray]:
    if digest is None and not isinstance(H, np.ndarray) and len(H):
        digests = {getattr(h, "dictionary_digest", None) for h in H} - {None}
        for dg in digests:
            _check_digest(model, dg)
    else:
        _check_digest(model, digest)
    values = model.decision_function(H)
    return np.where(values >= 0, 1, -1), values
