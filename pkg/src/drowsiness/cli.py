"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipelines as pl
from .core import (PipelineConfig, default_grid, iter_dataset, load_recording,
                   read_dataset_index, save_dataset_index, save_recording)
from .errors import ConfigError, DataError
from .eval import (emit_report, loso_evaluate, report_from_dict, score, write_predictions,
                   derive_seed)
from .synth import SynthProfile, generate_dataset

log = logging.getLogger("drowsiness")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def resolve_config(args) -> PipelineConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_json_file(args.config)
    over: dict = {}
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        _set_dotted(over, key, _parse_value(val))
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "repeats", None) is not None:
        over["n_repeats"] = args.repeats
    return cfg.with_overrides(**over) if over else cfg


def _write_resolved(cfg: PipelineConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(cfg.to_json(), encoding="utf-8")


def _load_features(data: Path, cfg: PipelineConfig, include_raw: bool):
    """Features for every subject; preprocessing is skipped for preprocessed datasets."""
    done = bool(read_dataset_index(data).get("preprocessed", False))
    feats = []
    for rec in iter_dataset(data):
        log.info("features: %s", rec.subject_id)
        if done:
            sf = pl.extract_psd_features(rec, cfg)
            if include_raw:
                sf = dataclasses.replace(
                    sf, raw_epochs=pl.extract_raw_epochs(rec, sf.grid, cfg))
        else:
            sf = pl.subject_features(rec, cfg, include_raw=include_raw)
        feats.append(sf)
    return feats


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    prof = SynthProfile()
    if args.profile:
        try:
            prof = SynthProfile.from_dict(json.loads(Path(args.profile).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read profile {args.profile}: {exc}") from exc
    over = {}
    if args.duration is not None:
        over["duration_s"] = args.duration
    if over:
        prof = SynthProfile.from_dict({**prof.to_dict(), **over})
    if args.null:
        prof = prof.null()
    generate_dataset(args.subjects, prof, args.seed, args.out)
    log.info("wrote %d subjects to %s", args.subjects, args.out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = read_dataset_index(args.data)
    for name in index["subjects"]:
        rec = load_recording(Path(args.data, name))
        save_recording(pl.preprocess(rec, cfg), out / name)
        log.info("preprocessed %s", name)
    save_dataset_index(out, index["subjects"], preprocessed=True)
    _write_resolved(cfg, out)
    return EXIT_OK


def cmd_features(args) -> int:
    """Write per-subject PSD features and labels from a preprocessed dataset."""
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = read_dataset_index(args.data)
    for name in index["subjects"]:
        rec = load_recording(Path(args.data, name))
        if rec.earlobe_indices is not None:
            raise DataError(f"{name} is not preprocessed; run 'preprocess' first")
        sf = pl.extract_psd_features(rec, cfg, default_grid(rec, cfg))
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "psd_z.npy", sf.psd.tensor)
        np.save(d / "psd_db.npy", sf.psd.db)
        meta = {"subject_id": sf.subject_id, "channel_labels": list(rec.channel_labels),
                "channel_mask": sf.psd.channel_mask.tolist(),
                "freq_bins_hz": sf.psd.freq_bins_hz.tolist(),
                "grid": {"start_s": sf.grid.start_s, "step_s": sf.grid.step_s,
                         "count": sf.grid.count}}
        (d / "features.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
        if sf.labels is not None:
            sf.labels.to_csv(d / "labels.csv")
        log.info("%s: %d/%d channels retained", name, sf.psd.n_retained, rec.n_channels)
    save_dataset_index(out, index["subjects"])
    _write_resolved(cfg, out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if cfg.seed is None:
        cfg = cfg.with_overrides(seed=0)
    alg = pl.AlgorithmId.parse(args.algorithm)
    feats = _load_features(Path(args.data), cfg, alg is pl.AlgorithmId.EEGNET_RAW)
    ids = [f.subject_id for f in feats]
    if args.target not in ids:
        raise DataError(f"unknown target subject {args.target!r}; have {ids}")
    t = ids.index(args.target)
    train = [f for i, f in enumerate(feats) if i != t]
    pred = pl.run_algorithm(alg, train, feats[t], cfg, derive_seed(cfg.seed, t, alg, args.repeat))
    sc = score(pred, feats[t].labels.values)
    out = Path(args.out)
    _write_resolved(cfg, out)
    rows = ["algorithm,subject,repeat,grid_time_s,prediction"]
    rows += [f"{alg.display_name},{args.target},{args.repeat},{tm:.6g},{v:.6g}"
             for tm, v in zip(feats[t].grid.times.tolist(), pred.tolist())]
    (out / "predictions.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(json.dumps({"algorithm": alg.display_name, "subject": args.target,
                      "rmse": sc.rmse, "cc": sc.cc, "cc_defined": sc.cc_defined}))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    if cfg.seed is None:
        raise ConfigError("compare needs a master seed (--seed or \"seed\" in the config)")
    algs = [pl.AlgorithmId.parse(a) for a in args.algorithms] if args.algorithms \
        else list(pl.ALGORITHMS)
    out = Path(args.out)
    _write_resolved(cfg, out)
    feats = _load_features(Path(args.data), cfg, pl.AlgorithmId.EEGNET_RAW in algs)
    report = loso_evaluate(feats, algs, cfg, jobs=args.jobs, progress=log.info)
    emit_report(report, out)
    write_predictions(report, out / "predictions.csv")
    log.info("wrote report to %s", out)
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.input)
    try:
        doc = json.loads(src.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {src}: {exc}") from exc
    emit_report(report_from_dict(doc), args.out)
    return EXIT_OK


def _common(p, config=True, seed=True):
    if config:
        p.add_argument("--config", help="JSON config file (overrides the defaults)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, e.g. psd_training.epochs=3")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (config key 'seed')")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drowsiness",
                     description="EEG drowsiness regression: data, features, models and "
                                 "leave-one-subject-out comparison.",
                     epilog=__doc__.split("\n\n", 1)[1].strip())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=15)
    p.add_argument("--duration", type=float, help="seconds per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", help="JSON file with SynthProfile fields")
    p.add_argument("--null", action="store_true", help="decouple the latent from EEG and RTs")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="band-pass, decimate and re-reference")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("features", help="PSD features and labels per subject")
    p.add_argument("--data", required=True, help="preprocessed dataset")
    p.add_argument("--out", required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("run", help="one algorithm on one target subject")
    p.add_argument("--data", required=True)
    p.add_argument("--algorithm", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="leave-one-subject-out comparison of all algorithms")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algorithms", nargs="+")
    p.add_argument("--repeats", type=int, help="config key 'n_repeats'")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="re-emit tables from report.json")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
