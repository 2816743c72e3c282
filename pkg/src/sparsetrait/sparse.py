"""LARS-Lasso sparse coding.

Solves ``min_c 0.5 * ||p - D c||^2 + lam * ||c||_1`` by following the Lasso
homotopy path from ``lam_max = max |D^T p|`` down to ``lam``.  The path
includes drop events (an active coefficient crossing zero leaves the active
set), so the end point is the exact Lasso solution rather than plain LARS.

The kernels work on the Gram matrix ``G = D^T D`` and the correlations
``D^T p``, which lets a whole batch of patches share one Gram computation.
They are compiled with numba; the batch kernel runs columns in parallel and
each column is solved independently, so results do not depend on the thread
count.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

GRAM_JITTER = 1e-12

# an outdated system TBB only disables one optional threading backend
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


@dataclass(frozen=True)
class LassoParams:
    lam: float = 0.1
    max_active: int | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lam must be finite and >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError("max_active must be >= 1")


@dataclass(frozen=True)
class CodeVector:
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))


@njit(cache=True, nogil=True)
def _forward(L, n, b, out):
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def _backward(L, n, b, out):
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def _chol_append(G, L, act, n, j, jitter, z):
    # L[:n, :n] L^T = G[act, act] + jitter I  ->  append row for atom j
    for r in range(n):
        z[r] = G[act[r], j]
    _forward(L, n, z, z)
    diag = G[j, j] + jitter
    for r in range(n):
        L[n, r] = z[r]
        diag -= z[r] * z[r]
    if diag < jitter:
        diag = jitter
    L[n, n] = np.sqrt(diag)


@njit(cache=True, nogil=True)
def _chol_delete(L, n, r):
    # drop row/column r of the factored matrix: remove row r of L, then
    # Givens rotations on column pairs restore lower-triangular form
    for i in range(r, n - 1):
        for c in range(n):
            L[i, c] = L[i + 1, c]
    for i in range(r, n - 1):
        x = L[i, i]
        y = L[i, i + 1]
        h = np.sqrt(x * x + y * y)
        cs = x / h
        sn = y / h
        for k in range(i, n - 1):
            p = L[k, i]
            q = L[k, i + 1]
            L[k, i] = cs * p + sn * q
            L[k, i + 1] = -sn * p + cs * q
    for c in range(n):
        L[n - 1, c] = 0.0
    for k in range(n):
        L[k, n - 1] = 0.0


@njit(cache=True, nogil=True)
def _workspace(m, cap):
    return (np.empty(cap, dtype=np.int64), np.empty(cap), np.empty((cap, cap)),
            np.empty(cap), np.empty(cap), np.empty(cap), np.empty((cap, m)),
            np.empty(m, dtype=np.bool_), np.empty(m))


@njit(cache=True, nogil=True)
def _lars_path(G, corr0, lam, max_active, tol, jitter, beta, ws):
    act, sgn, L, z, y, w, GA, in_active, corr = ws
    m = G.shape[0]
    for j in range(m):
        beta[j] = 0.0
        corr[j] = corr0[j]
        in_active[j] = False

    C = 0.0
    first = -1
    for j in range(m):
        if abs(corr[j]) > C:
            C = abs(corr[j])
            first = j
    # within tol of lam counts as a tie at the origin
    if C <= lam + tol or first < 0:
        return 0

    cap = min(max_active, m)
    _chol_append(G, L, act, 0, first, jitter, z)
    act[0] = first
    GA[0] = G[first]
    sgn[0] = 1.0 if corr[first] > 0 else -1.0
    in_active[first] = True
    n = 1
    last_dropped = -1

    max_iter = 8 * (m + cap) + 100
    for _ in range(max_iter):
        # equiangular direction in coefficient space: G_AA w = sgn
        _forward(L, n, sgn, y)
        _backward(L, n, y, w)
        # a = G[:, act] @ w; GA caches the active rows of the symmetric Gram
        a = np.dot(w[:n], GA[:n])

        step = C - lam
        event = 0  # 0: reach lam, 1: join, 2: drop
        who = -1
        if n < cap:
            for j in range(m):
                if in_active[j]:
                    continue
                # a just-dropped atom sits exactly on the boundary; only a
                # strictly positive step may bring it back
                floor = tol if j == last_dropped else 0.0
                den = 1.0 - a[j]
                if den > tol:
                    g = (C - corr[j]) / den
                    if g < 0.0:
                        g = 0.0
                    if g < step and (g > floor or floor == 0.0):
                        step = g
                        event = 1
                        who = j
                den = 1.0 + a[j]
                if den > tol:
                    g = (C + corr[j]) / den
                    if g < 0.0:
                        g = 0.0
                    if g < step and (g > floor or floor == 0.0):
                        step = g
                        event = 1
                        who = j
        for r in range(n):
            b = beta[act[r]]
            if b != 0.0 and w[r] != 0.0:
                g = -b / w[r]
                if g > 0.0 and g < step:
                    step = g
                    event = 2
                    who = r

        for r in range(n):
            beta[act[r]] += step * w[r]
        for j in range(m):
            corr[j] -= step * a[j]
        C -= step

        if event == 0:
            break
        elif event == 1:
            _chol_append(G, L, act, n, who, jitter, z)
            act[n] = who
            GA[n] = G[who]
            sgn[n] = 1.0 if corr[who] > 0 else -1.0
            in_active[who] = True
            n += 1
            last_dropped = -1
        else:
            j = act[who]
            beta[j] = 0.0
            in_active[j] = False
            for r in range(who, n - 1):
                act[r] = act[r + 1]
                sgn[r] = sgn[r + 1]
                GA[r] = GA[r + 1]
            _chol_delete(L, n, who)
            n -= 1
            last_dropped = j
        if C <= lam:
            break
    return n


@njit(cache=True, nogil=True, parallel=True)
def _lars_batch(G, D, P, lam, max_active, tol, jitter, out, n_chunks):
    # correlations are formed here in a fixed loop order so a column's code
    # never depends on which batch it was submitted with
    d, m = D.shape
    k = P.shape[1]
    cap = min(max_active, m)
    size = (k + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        ws = _workspace(m, cap)
        beta = np.empty(m)
        col = np.empty(m)
        for i in range(c * size, min(k, (c + 1) * size)):
            for j in range(m):
                acc = 0.0
                for t in range(d):
                    acc += D[t, j] * P[t, i]
                col[j] = acc
            _lars_path(G, col, lam, max_active, tol, jitter, beta, ws)
            for j in range(m):
                out[j, i] = beta[j]


def _check_dictionary(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("dictionary must be a 2-D d x m matrix")
    if not np.all(np.isfinite(D)):
        raise ValueError("dictionary contains non-finite entries")
    return D


def _atoms(D) -> np.ndarray:
    return _check_dictionary(getattr(D, "atoms", D))


def _max_active(params: LassoParams, d: int, m: int) -> int:
    cap = min(d, m)
    if params.max_active is not None:
        cap = min(cap, params.max_active)
    return max(cap, 1)


def _run(D, P, params, out, n_chunks):
    G = D.T @ D
    _lars_batch(G, np.asfortranarray(D), np.asfortranarray(P), float(params.lam),
                _max_active(params, *D.shape), float(params.tol), GRAM_JITTER, out, n_chunks)


def lasso_lars(p, D, params: LassoParams | None = None) -> CodeVector:
    """Lasso code of one patch vector `p` against dictionary `D` (d x m)."""
    params = params or LassoParams()
    D = _atoms(D)
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != D.shape[0]:
        raise ValueError(f"patch of shape {p.shape} does not match dictionary with d={D.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise ValueError("patch contains non-finite entries")
    out = np.zeros((D.shape[1], 1))
    _run(D, p[:, None], params, out, 1)
    return CodeVector(out[:, 0])


def encode_all(P, D, params: LassoParams | None = None, threads: int | None = None) -> np.ndarray:
    """Code every column of `P` (d x k); returns the m x k code matrix.

    Column ``i`` of the result is ``lasso_lars(P[:, i], D, params).values``.
    """
    params = params or LassoParams()
    D = _atoms(D)
    P = np.asarray(getattr(P, "columns", P), dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != D.shape[0]:
        raise ValueError(f"patch dimension {P.shape[0]} does not match dictionary d={D.shape[0]}")
    if not np.all(np.isfinite(P)):
        raise ValueError("patches contain non-finite entries")
    out = np.zeros((D.shape[1], P.shape[1]))
    if P.shape[1] == 0:
        return out
    if threads is not None:
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    _run(D, P, params, out, numba.get_num_threads())
    return out


def lasso_objective(P, D, codes, lam: float) -> float:
    """``0.5 ||P - D C||_F^2 + lam ||C||_1`` for column-stacked patches and codes."""
    D = _atoms(D)
    P = np.asarray(getattr(P, "columns", P), dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    R = P - D @ codes
    return 0.5 * float(np.sum(R * R)) + lam * float(np.abs(codes).sum())


def kkt_violation(p, D, c, lam: float) -> float:
    """Largest violation of the Lasso optimality conditions at code `c`."""
    D = _atoms(D)
    c = np.asarray(getattr(c, "values", c), dtype=np.float64)
    g = D.T @ (np.asarray(p, dtype=np.float64) - D @ c)
    act = c != 0
    viol = 0.0
    if act.any():
        viol = float(np.max(np.abs(g[act] - lam * np.sign(c[act]))))
    if (~act).any():
        viol = max(viol, float(np.max(np.abs(g[~act]))) - lam)
    return max(viol, 0.0)
