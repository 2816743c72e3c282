"""UAR, speaker-grouped folds and nested cross-validation.

All randomness in a cross-validation run is derived from ``(seed, outer
fold, inner fold, grid indices)`` so the outcome does not depend on manifest
order or evaluation schedule.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dictionary import LearnConfig
from .pipeline import ClipFeatures, canonical, encode_clips, learn_dictionary
from .svm import KernelParams, SingleClassError, median_distance, predict_many, train

log = logging.getLogger(__name__)

AXES = ("m", "lam", "C", "gamma")


def uar(labels, preds) -> float:
    """Unweighted average recall: mean of the per-class recalls of +1 and -1."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if labels.shape != preds.shape:
        raise ValueError("labels and predictions differ in length")
    pos = labels > 0
    neg = labels < 0
    if not pos.any() or not neg.any():
        raise SingleClassError("UAR needs both classes among the labels")
    rec_pos = float(np.mean(preds[pos] > 0))
    rec_neg = float(np.mean(preds[neg] < 0))
    return (rec_pos + rec_neg) / 2


@dataclass(frozen=True)
class FoldPlan:
    assignments: dict
    k: int
    seed: int

    def fold(self, i: int) -> list[str]:
        return sorted(c for c, f in self.assignments.items() if f == i)

    def split(self, i: int) -> tuple[list[str], list[str]]:
        test = self.fold(i)
        tset = set(test)
        return sorted(c for c in self.assignments if c not in tset), test

    def sizes(self) -> list[int]:
        counts = Counter(self.assignments.values())
        return [counts.get(i, 0) for i in range(self.k)]


def make_folds(clips, k: int, seed: int = 0) -> FoldPlan:
    """Speaker-grouped folds balanced by clip count.

    `clips` holds objects with ``clip_id`` and ``speaker_id`` (or pairs).
    Speakers are shuffled by `seed`, stably ordered by descending clip count
    and each is given to the fold holding the fewest clips so far (lowest
    index on ties).
    """
    pairs = [(c.clip_id, c.speaker_id) if hasattr(c, "clip_id") else tuple(c) for c in clips]
    if k < 1:
        raise ValueError("k must be >= 1")
    by_speaker: dict[str, list[str]] = {}
    for cid, spk in pairs:
        by_speaker.setdefault(spk, []).append(cid)
    speakers = sorted(by_speaker)
    if len(speakers) < k:
        raise ValueError(f"need at least {k} speakers for {k} folds, got {len(speakers)}")
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    order.sort(key=lambda s: -len(by_speaker[s]))
    load = [0] * k
    assignments = {}
    for spk in order:
        f = min(range(k), key=lambda i: (load[i], i))
        load[f] += len(by_speaker[spk])
        for cid in by_speaker[spk]:
            assignments[cid] = f
    return FoldPlan(assignments, k, seed)


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per axis.  ``gamma`` values are multipliers of
    ``1 / median chi2 distance`` on the training split."""

    m: tuple = (200, 400, 800)
    lam: tuple = (0.05, 0.1, 0.2, 0.4)
    C: tuple = (0.1, 1.0, 10.0, 100.0)
    gamma: tuple = (2.0 ** -8, 2.0 ** -6, 2.0 ** -4, 2.0 ** -2, 1.0)

    def __post_init__(self):
        for ax in AXES:
            vals = tuple(getattr(self, ax))
            if not vals:
                raise ValueError(f"grid axis {ax!r} is empty")
            object.__setattr__(self, ax, vals)

    def points(self) -> list[dict]:
        """All grid points in declared order (gamma varies fastest)."""
        return [dict(zip(AXES, combo)) for combo in
                itertools.product(self.m, self.lam, self.C, self.gamma)]

    def __len__(self) -> int:
        return len(self.m) * len(self.lam) * len(self.C) * len(self.gamma)


@dataclass
class FoldResult:
    trait: str
    fold: int
    params: dict
    uar: float
    gamma_abs: float
    dictionary_digest: str
    n_train: int
    n_test: int
    inner_scores: list = field(default_factory=list)


@dataclass
class CVResult:
    trait: str
    folds: list

    @property
    def fold_uars(self) -> list[float]:
        return [f.uar for f in self.folds]

    @property
    def mean_uar(self) -> float:
        return float(np.mean(self.fold_uars))

    @property
    def std_uar(self) -> float:
        return float(np.std(self.fold_uars))


def _derived_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *[p + 1 for p in parts]]).generate_state(1)[0])


class _HistogramCache:
    """Dictionaries and histograms per (outer, inner, m, lam); shared by every trait."""

    def __init__(self, feats, learn_cfg: LearnConfig, seed: int, normalize: bool,
                 threads: int | None, meta: dict | None):
        self.by_id = {f.clip_id: f for f in feats}
        self.learn_cfg = learn_cfg
        self.seed = seed
        self.normalize = normalize
        self.threads = threads
        self.meta = meta or {}
        self._store = {}

    def get(self, outer: int, inner: int, mi: int, li: int, m: int, lam: float,
            train_ids, test_ids):
        key = (outer, inner, mi, li)
        if key not in self._store:
            train_feats = canonical(self.by_id[c] for c in train_ids)
            cfg = replace(self.learn_cfg, m=int(m), lam=float(lam),
                          seed=_derived_seed(self.seed, outer, inner, mi, li))
            info = dict(self.meta, outer_fold=outer, inner_fold=inner)
            D = learn_dictionary(train_feats, cfg, info, threads=self.threads)
            ids = sorted(set(train_ids) | set(test_ids))
            hists = encode_clips([self.by_id[c] for c in ids], D, lam, self.normalize, self.threads)
            self._store[key] = (D.digest().hex(), {h.clip_id: h for h in hists})
            log.info("dictionary for outer=%d inner=%d m=%d lam=%g ready", outer, inner, m, lam)
        return self._store[key]


def _fit_score(hists, train_ids, test_ids, trait, C, gscale):
    """Fit on `train_ids`, return (UAR on `test_ids`, absolute gamma)."""
    Xtr = np.stack([hists[c].bins for c in train_ids])
    ytr = np.array([hists[c].labels[trait] for c in train_ids])
    yte = np.array([hists[c].labels[trait] for c in test_ids])
    gamma = gscale / median_distance(Xtr)
    model = train(Xtr, ytr, C, KernelParams(gamma), trait=trait)
    preds, _ = predict_many(model, np.stack([hists[c].bins for c in test_ids]))
    return uar(yte, preds), gamma


def _inner_score(hists, train_ids, test_ids, trait, C, gscale) -> float:
    # a split missing a class on either side scores chance level
    try:
        return _fit_score(hists, train_ids, test_ids, trait, C, gscale)[0]
    except SingleClassError:
        return 0.5


def nested_cv_traits(feats: Sequence[ClipFeatures], traits: Sequence[str], grid: GridSpec,
                     k_outer: int = 3, k_inner: int = 5, seed: int = 0,
                     learn_cfg: LearnConfig | None = None, reuse_dict: bool = False,
                     normalize: bool = False, threads: int | None = None,
                     meta: dict | None = None) -> dict[str, CVResult]:
    """Nested speaker-grouped CV for several traits sharing dictionaries per fold.

    For each outer fold the inner `k_inner`-fold CV on the outer-training
    clips picks the grid point with the highest mean inner UAR (first in
    declared order on ties); the pipeline is then refit on all outer-training
    clips at that point and scored on the outer test fold.  Dictionaries are
    learned on training clips only: per inner split, or once per outer fold
    when `reuse_dict` is set.  A grid of one point skips the inner loop since
    its choice is forced.
    """
    feats = canonical(feats)
    learn_cfg = learn_cfg or LearnConfig()
    cache = _HistogramCache(feats, learn_cfg, seed, normalize, threads, meta)
    outer_plan = make_folds(feats, k_outer, seed)
    points = grid.points()
    m_index = {v: i for i, v in enumerate(grid.m)}
    l_index = {v: i for i, v in enumerate(grid.lam)}
    results = {t: CVResult(t, []) for t in traits}

    for o in range(k_outer):
        train_ids, test_ids = outer_plan.split(o)
        inner_means = {t: [0.0] * len(points) for t in traits}
        if len(points) > 1:
            by_id = {f.clip_id: f for f in feats}
            inner_plan = make_folds([by_id[c] for c in train_ids], k_inner,
                                    _derived_seed(seed, o))
            for i in range(k_inner):
                itrain, ival = inner_plan.split(i)
                for pi, pt in enumerate(points):
                    mi, li = m_index[pt["m"]], l_index[pt["lam"]]
                    if reuse_dict:
                        _, hists = cache.get(o, -1, mi, li, pt["m"], pt["lam"], train_ids, test_ids)
                    else:
                        _, hists = cache.get(o, i, mi, li, pt["m"], pt["lam"], itrain, ival)
                    for t in traits:
                        s = _inner_score(hists, itrain, ival, t, pt["C"], pt["gamma"])
                        inner_means[t][pi] += s / k_inner
        for t in traits:
            best = int(np.argmax(inner_means[t]))  # first maximum wins
            pt = points[best]
            digest, hists = cache.get(o, -1, m_index[pt["m"]], l_index[pt["lam"]],
                                      pt["m"], pt["lam"], train_ids, test_ids)
            try:
                score, gamma = _fit_score(hists, train_ids, test_ids, t, pt["C"], pt["gamma"])
            except SingleClassError as exc:
                warnings.warn(f"trait {t}, outer fold {o}: {exc}; UAR undefined")
                score, gamma = float("nan"), float("nan")
            results[t].folds.append(FoldResult(
                t, o, dict(pt), score, gamma, digest, len(train_ids), len(test_ids),
                list(inner_means[t]) if len(points) > 1 else []))
            log.info("trait %s fold %d: %s -> UAR %.4f", t, o, pt, score)
    return results


def nested_cv(feats, trait: str, grid: GridSpec, k_outer: int = 3, k_inner: int = 5,
              **kwargs) -> CVResult:
    return nested_cv_traits(feats, [trait], grid, k_outer, k_inner, **kwargs)[trait]


def results_rows(results: dict[str, CVResult]) -> list[list[str]]:
    rows = [["trait", "fold", "m", "lambda", "C", "gamma", "uar"]]
    for t in results:
        for f in results[t].folds:
            p = f.params
            rows.append([t, str(f.fold), str(p["m"]), repr(float(p["lam"])), repr(float(p["C"])),
                         repr(float(p["gamma"])), repr(float(f.uar))])
    return rows


def summary(results: dict[str, CVResult]) -> dict:
    out = {}
    for t, r in results.items():
        out[t] = {
            "mean_uar": r.mean_uar,
            "std_uar": r.std_uar,
            "folds": [
                {"fold": f.fold, "uar": f.uar, "params": f.params, "gamma_abs": f.gamma_abs,
                 "dictionary_digest": f.dictionary_digest, "n_train": f.n_train,
                 "n_test": f.n_test}
                for f in r.folds
            ],
        }
    return out
