"""Batch command line: spectro, learn-dict, encode, train, predict, cv.

Exit codes: 0 success, 1 partial failure (some clips skipped), 2 invalid input.
Options can also come from a JSON file (``--config``) whose keys are the
option names with dashes replaced by underscores; explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .audio import TRAITS, ManifestError, load_wav, read_manifest
from .dictionary import Dictionary, LearnConfig
from .evaluation import GridSpec, nested_cv_traits, results_rows, summary
from .patches import PatchGrid
from .pipeline import encode_clips, learn_dictionary, load_features
from .pool import Histogram, load_histograms, save_histograms, write_csv
from .spectrogram import SpectrogramParams, save_spectrogram, spectrogram
from .svm import DigestMismatchError, KernelParams, TraitModel, median_distance, predict_many, train

log = logging.getLogger("sparsetrait")

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2
THREADS_ENV = "SPARSETRAIT_THREADS"


class InvalidInput(Exception):
    pass


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _traits(text: str) -> list[str]:
    out = []
    for ch in text.upper():
        if ch not in TRAITS:
            raise argparse.ArgumentTypeError(f"unknown trait {ch!r}; use letters from OCEAN")
        if ch not in out:
            out.append(ch)
    return out


def _add_signal_opts(p):
    g = p.add_argument_group("spectrogram / patches")
    g.add_argument("--window-len", type=int, default=128)
    g.add_argument("--hop", type=int, default=32)
    g.add_argument("--patch-size", type=int, default=16)
    g.add_argument("--stride-time", type=int, default=8)
    g.add_argument("--stride-freq", type=int, default=4)


def _add_learn_opts(p, with_grid_defaults=True):
    g = p.add_argument_group("dictionary learning")
    if with_grid_defaults:
        g.add_argument("--m", type=int, default=200, help="number of atoms")
        g.add_argument("--lam", type=float, default=0.1, help="l1 weight")
    g.add_argument("--n-iters", type=int, default=200)
    g.add_argument("--batch", type=int, default=10000)
    g.add_argument("--probe", type=int, default=1000)


def _common(p):
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help=f"worker threads (default from ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsetrait", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectro", help="dump normalized spectrograms (SPGM)")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="output directory")
    _add_signal_opts(p)
    _common(p)
    p.set_defaults(func=cmd_spectro)

    p = sub.add_parser("learn-dict", help="learn a patch dictionary (SPDL)")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="dictionary file")
    p.add_argument("--subset", help="file listing clip_ids to train on, one per line")
    _add_signal_opts(p)
    _add_learn_opts(p)
    _common(p)
    p.set_defaults(func=cmd_learn_dict)

    p = sub.add_parser("encode", help="encode clips into pooled histograms (SPHS + CSV)")
    p.add_argument("manifest")
    p.add_argument("--dict", required=True, help="dictionary file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--lam", type=float, help="l1 weight (default: the dictionary's)")
    p.add_argument("--normalize-hist", action="store_true", help="l1-normalize histograms")
    _common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train one SVM per trait (SPSV)")
    p.add_argument("--histograms", required=True, help="SPHS file from `encode`")
    p.add_argument("--dict", help="dictionary file; its digest must match the histograms")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--traits", type=_traits, default=list(TRAITS))
    p.add_argument("--C", type=float, default=1.0, dest="C")
    kg = p.add_mutually_exclusive_group()
    kg.add_argument("--gamma", type=float, help="absolute kernel width")
    kg.add_argument("--gamma-scale", type=float, default=1.0,
                    help="kernel width as a multiple of 1/median chi2 distance (default 1)")
    p.add_argument("--pos-weight", type=float, help="positive-class cost multiplier (default n_neg/n_pos)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label histograms with trained models")
    p.add_argument("--histograms", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--dict", help="dictionary file; refused if it does not match the models")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="nested speaker-grouped cross-validation")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--traits", type=_traits, default=list(TRAITS))
    p.add_argument("--k-outer", type=int, default=3)
    p.add_argument("--k-inner", type=int, default=5)
    p.add_argument("--grid-m", type=int, nargs="+", default=[200, 400, 800])
    p.add_argument("--grid-lam", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.4])
    p.add_argument("--grid-C", type=float, nargs="+", default=[0.1, 1.0, 10.0, 100.0], dest="grid_C")
    p.add_argument("--grid-gamma", type=float, nargs="+",
                   default=[2.0 ** -8, 2.0 ** -6, 2.0 ** -4, 2.0 ** -2, 1.0],
                   help="multipliers of 1/median chi2 distance on the training split")
    p.add_argument("--reuse-dict", action="store_true",
                   help="inner folds reuse the outer-training dictionary")
    p.add_argument("--normalize-hist", action="store_true")
    _add_signal_opts(p)
    _add_learn_opts(p, with_grid_defaults=False)
    _common(p)
    p.set_defaults(func=cmd_cv)
    return parser


def _signal(args) -> tuple[SpectrogramParams, PatchGrid]:
    try:
        return (SpectrogramParams(args.window_len, args.hop),
                PatchGrid(args.patch_size, args.stride_time, args.stride_freq))
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None


def _signal_meta(sp: SpectrogramParams, grid: PatchGrid) -> dict:
    return {"spectrogram": asdict(sp), "patches": asdict(grid)}


def _manifest(path):
    try:
        entries = read_manifest(path)
    except (OSError, ManifestError) as exc:
        raise InvalidInput(f"cannot read manifest: {exc}") from None
    if not entries:
        raise InvalidInput("no clips")
    return entries


def _features(args, entries):
    sp, grid = _signal(args)
    feats, failures = load_features(entries, sp, grid, args.threads)
    for cid, exc in failures:
        print(f"error: clip {cid}: {exc}", file=sys.stderr)
    if not feats:
        raise InvalidInput("no usable clips")
    return feats, failures, sp, grid


def _learn_config(args, m, lam) -> LearnConfig:
    try:
        return LearnConfig(m=m, lam=lam, n_iters=args.n_iters, batch=args.batch,
                           seed=args.seed, probe=args.probe)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None


def cmd_spectro(args) -> int:
    entries = _manifest(args.manifest)
    sp, _ = _signal(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for e in entries:
        try:
            spec = spectrogram(load_wav(e.path, e.clip_id, e.speaker_id), sp)
        except (OSError, ValueError) as exc:
            print(f"error: clip {e.clip_id}: {exc}", file=sys.stderr)
            failed += 1
            continue
        save_spectrogram(out / f"{e.clip_id}.spgm", spec, {"version": __version__, "seed": args.seed})
        print(f"{e.clip_id}: {spec.shape[0]}x{spec.shape[1]}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_learn_dict(args) -> int:
    entries = _manifest(args.manifest)
    if args.subset:
        keep = {line.strip() for line in Path(args.subset).read_text().splitlines() if line.strip()}
        entries = [e for e in entries if e.clip_id in keep]
        if not entries:
            raise InvalidInput("subset selects no clips")
    d = args.patch_size ** 2
    if not 1 <= args.m <= 10 * d:
        raise InvalidInput(f"m must be in 1..{10 * d} for {args.patch_size}x{args.patch_size} patches")
    feats, failures, sp, grid = _features(args, entries)
    cfg = _learn_config(args, args.m, args.lam)
    meta = dict(_signal_meta(sp, grid), version=__version__)
    D = learn_dictionary(feats, cfg, meta, threads=args.threads)
    D.save(args.out)
    for it, val in D.meta["objective_trace"]:
        print(f"iter {it}: probe objective {val:.6g}")
    print(f"dictionary {D.d}x{D.m} written to {args.out} (sha256 {D.digest().hex()})")
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_dictionary(path) -> Dictionary:
    try:
        return Dictionary.load(path)
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read dictionary {path}: {exc}") from None


def cmd_encode(args) -> int:
    D = _load_dictionary(args.dict)
    sp_meta = D.meta.get("spectrogram", {})
    pg_meta = D.meta.get("patches", {})
    args.window_len = sp_meta.get("window_len", 128)
    args.hop = sp_meta.get("hop", 32)
    args.patch_size = pg_meta.get("patch_size", 16)
    args.stride_time = pg_meta.get("stride_time", 8)
    args.stride_freq = pg_meta.get("stride_freq", 4)
    if args.patch_size ** 2 != D.d:
        raise InvalidInput("dictionary atom length does not match its patch size")
    lam = args.lam if args.lam is not None else D.meta.get("lambda")
    if lam is None:
        raise InvalidInput("dictionary carries no lambda; pass --lam")
    entries = _manifest(args.manifest)
    feats, failures, sp, grid = _features(args, entries)
    hists = encode_clips(feats, D, lam, args.normalize_hist, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(_signal_meta(sp, grid), version=__version__, seed=args.seed, lam=lam,
                normalize=bool(args.normalize_hist), m=D.m)
    save_histograms(out / "histograms.sphs", hists, meta)
    for t in TRAITS:
        write_csv(out / f"histograms_{t}.csv", hists, t)
    print(f"{len(hists)} histograms of {D.m} bins written to {out}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_hists(path) -> tuple[list[Histogram], dict]:
    try:
        return load_histograms(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InvalidInput(f"cannot read histograms {path}: {exc}") from None


def cmd_train(args) -> int:
    hists, meta = _load_hists(args.histograms)
    if not hists:
        raise InvalidInput("no histograms")
    digest = meta.get("dictionary_digest")
    if args.dict:
        dd = _load_dictionary(args.dict).digest().hex()
        if digest is not None and dd != digest:
            raise InvalidInput("histograms were not encoded with this dictionary")
        digest = dd
    X = np.stack([h.bins for h in hists])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in args.traits:
        y = np.array([h.labels[t] for h in hists])
        if args.gamma is not None:
            gamma, scale = args.gamma, None
        else:
            scale = args.gamma_scale
            gamma = scale / median_distance(X)
        try:
            model = train(X, y, args.C, KernelParams(gamma), args.pos_weight, trait=t,
                          dictionary_digest=digest,
                          meta={"version": __version__, "seed": args.seed, "gamma_scale": scale,
                                "lam": meta.get("lam"), "spectrogram": meta.get("spectrogram"),
                                "patches": meta.get("patches")})
        except ValueError as exc:
            raise InvalidInput(f"trait {t}: {exc}") from None
        model.save(out / f"model_{t}.spsv")
        print(f"trait {t}: {model.n_sv} support vectors, gamma={gamma:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    hists, meta = _load_hists(args.histograms)
    models = []
    for path in args.models:
        try:
            models.append(TraitModel.load(path))
        except (OSError, ValueError) as exc:
            raise InvalidInput(f"cannot read model {path}: {exc}") from None
    if args.dict:
        dd = _load_dictionary(args.dict).digest().hex()
        for mdl in models:
            if mdl.dictionary_digest is not None and mdl.dictionary_digest != dd:
                raise InvalidInput(f"model for trait {mdl.trait} was trained with a different dictionary")
    rows = []
    for mdl in models:
        try:
            labels, values = predict_many(mdl, hists)
        except DigestMismatchError as exc:
            raise InvalidInput(str(exc)) from None
        except ValueError as exc:
            raise InvalidInput(f"trait {mdl.trait}: {exc}") from None
        rows.extend((h.clip_id, mdl.trait, int(lab), repr(float(v)))
                    for h, lab, v in zip(hists, labels, values))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "trait", "label", "decision_value"])
        w.writerows(rows)
    print(f"{len(rows)} predictions written to {args.out}")
    return EXIT_OK


def cmd_cv(args) -> int:
    entries = _manifest(args.manifest)
    try:
        grid = GridSpec(tuple(args.grid_m), tuple(args.grid_lam), tuple(args.grid_C),
                        tuple(args.grid_gamma))
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None
    feats, failures, sp, pg = _features(args, entries)
    cfg = _learn_config(args, grid.m[0], grid.lam[0])
    meta = dict(_signal_meta(sp, pg), version=__version__)
    try:
        results = nested_cv_traits(feats, args.traits, grid, args.k_outer, args.k_inner,
                                   seed=args.seed, learn_cfg=cfg, reuse_dict=args.reuse_dict,
                                   normalize=args.normalize_hist, threads=args.threads, meta=meta)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(results_rows(results))
    report = {
        "version": __version__, "seed": args.seed, "k_outer": args.k_outer,
        "k_inner": args.k_inner, "reuse_dict": args.reuse_dict,
        "grid": {"m": list(grid.m), "lambda": list(grid.lam), "C": list(grid.C),
                 "gamma": list(grid.gamma)},
        "learn": {"n_iters": cfg.n_iters, "batch": cfg.batch, "probe": cfg.probe},
        **_signal_meta(sp, pg),
        "n_clips": len(feats), "skipped": [cid for cid, _ in failures],
        "traits": summary(results),
    }
    (out / "summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for t, r in results.items():
        print(f"trait {t}: mean UAR {r.mean_uar:.4f} (std {r.std_uar:.4f}) "
              f"folds {', '.join(f'{u:.4f}' for u in r.fold_uars)}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidInput("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "traits" in cfg and isinstance(cfg["traits"], str):
        cfg["traits"] = _traits(cfg["traits"])
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
