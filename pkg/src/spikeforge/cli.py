"""Command-line entry point: simulate / preprocess / train / infer / evaluate / experiment / inspect.

Configuration files are JSON; individual keys can be overridden from the
shell with repeated ``--override key=value`` flags (dotted keys descend into
nested objects, values are parsed as JSON with a fallback to plain strings).
``--seed`` beats the config value; the SPIKEFORGE_SEED environment variable
is the fallback when neither is given.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError, UsageError
from .features import FeatureMatrix, fit_pca_pooled, project, extract_windows
from .harness import ExperimentSpec, default_jobs, run_experiment
from .metrics import MonotoneCalibration, cell_row, evaluate, load_report
from .models import load_ensemble, predict_rates, sample_spike_train, save_ensemble
from .preprocess import preprocess_recording
from .signal_io import load_dataset, load_recording
from .synth import SynthConfig, generate_dataset
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

SEED_ENV_VAR = "SPIKEFORGE_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    return repr(float(x))


def _load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError("missing file", path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc}", path) from None


def _apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return cfg


def _resolve_seed(cli_seed, cfg: dict) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    return 0


def _add_common(parser):
    parser.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="override a config entry (repeatable, dotted keys)")
    parser.add_argument("--seed", type=int, default=None, help="global seed override")
    parser.add_argument("--verbose", action="store_true", help="log progress details")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    cfg = _apply_overrides(cfg, args.override)
    cfg["seed"] = _resolve_seed(args.seed, cfg)
    synth_cfg = SynthConfig.from_dict(cfg)
    recordings = generate_dataset(synth_cfg, args.out)
    n_spikes = sum(r.n_spikes for r in recordings)
    print(
        f"wrote {len(recordings)} cells to {args.out} "
        f"({n_spikes} spikes, {synth_cfg.duration_s:g} s each at {synth_cfg.sample_rate_hz:g} Hz)"
    )
    return 0


def cmd_preprocess(args) -> int:
    recordings = (
        load_dataset(args.data) if args.data else [load_recording(args.bundle)]
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        binned = preprocess_recording(rec)
        centers = (np.arange(binned.n_bins) + 0.5) / binned.bin_rate_hz
        path = out / f"{rec.cell_id}_preprocessed.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_s,f,k\n")
            for t, v, k in zip(centers, binned.fluorescence, binned.spike_counts):
                fh.write(f"{_fmt(t)},{_fmt(v)},{int(k)}\n")
        print(f"wrote {path} ({binned.n_bins} bins)")
    return 0


def _train_pipeline(dataset_path, cfg: dict):
    window_ms = float(cfg.pop("window_ms", 1000.0))
    threshold = float(cfg.pop("pca_variance_threshold", 0.95))
    try:
        train_cfg = TrainConfig.from_dict(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    recordings = load_dataset(dataset_path)
    if not recordings:
        raise DataError("dataset has no cells", dataset_path)
    prepped = [preprocess_recording(r) for r in recordings]
    windows = [extract_windows(p.fluorescence, window_ms=window_ms) for p in prepped]
    basis = fit_pca_pooled(windows, threshold)
    X = np.vstack([project(basis, w).data for w in windows])
    counts = np.concatenate([p.spike_counts for p in prepped])
    feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=window_ms)
    return train(feats, counts, train_cfg, basis), train_cfg


def cmd_train(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    cfg = _apply_overrides(cfg, args.override)
    cfg["seed"] = _resolve_seed(args.seed, cfg)
    outcome, train_cfg = _train_pipeline(args.data, cfg)
    model_path = save_ensemble(outcome.ensemble, args.out)
    log_path = Path(str(model_path) + ".log.json")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "member_objective_histories": outcome.member_histories,
                "member_statuses": outcome.member_statuses,
                "train_config": train_cfg.to_dict(),
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    finals = [h[-1] for h in outcome.member_histories]
    print(
        f"wrote {model_path} ({train_cfg.kind}, {len(outcome.ensemble.members)} members, "
        f"final objective {min(finals):.6f}); log at {log_path}"
    )
    return 0


def cmd_infer(args) -> int:
    ensemble = load_ensemble(args.model)
    if ensemble.bin_rate_hz != 100.0:
        raise DataError(
            f"model bin rate {ensemble.bin_rate_hz} Hz unsupported; expected 100 Hz",
            args.model,
        )
    rec = load_recording(args.bundle)
    binned = preprocess_recording(rec)
    rates = predict_rates(ensemble, binned.fluorescence)
    centers = (np.arange(rates.size) + 0.5) / ensemble.bin_rate_hz
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_s,rate_per_bin\n")
        for t, r in zip(centers, rates):
            fh.write(f"{_fmt(t)},{_fmt(r)}\n")
    print(f"wrote {out} ({rates.size} bins, mean rate {rates.mean():.4f}/bin)")
    if args.sample:
        seed = _resolve_seed(args.seed, {})
        counts = sample_spike_train(rates, seed)
        sample_path = Path(str(out) + ".sample.csv")
        with open(sample_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_s,count\n")
            for t, c in zip(centers, counts):
                fh.write(f"{_fmt(t)},{int(c)}\n")
        print(f"wrote {sample_path} ({int(counts.sum())} sampled spikes, seed {seed})")
    return 0


def _read_rates_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError("missing file", path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "t_s,rate_per_bin":
        raise DataError("expected header 't_s,rate_per_bin'", path, 1)
    rates = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise DataError("expected 2 fields", path, i)
        try:
            rates.append(float(fields[1]))
        except ValueError:
            raise DataError(f"malformed numeric field {fields[1]!r}", path, i) from None
    return np.asarray(rates)


def _load_calibration(path) -> MonotoneCalibration:
    doc = _load_json(path)
    if "calibration_knots" in doc:
        doc = doc["calibration_knots"]
    if "x" not in doc or "y" not in doc:
        raise DataError("expected calibration knots under 'x' and 'y'", path)
    return MonotoneCalibration(knots_x=doc["x"], knots_y=doc["y"])


def cmd_evaluate(args) -> int:
    rates = _read_rates_csv(args.pred)
    rec = load_recording(args.bundle)
    binned = preprocess_recording(rec)
    if rates.size != binned.n_bins:
        raise DataError(
            f"prediction length {rates.size} does not match trace bins {binned.n_bins}",
            args.pred,
        )
    calib = _load_calibration(args.calibration) if args.calibration else None
    cm = evaluate(rates, binned.spike_counts, args.rate, calib=calib)
    row = cell_row(rec.cell_id, cm)
    row["eval_rate_hz"] = args.rate
    text = json.dumps(row, sort_keys=True, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_json(args.spec)
    cfg = _apply_overrides(cfg, args.override)
    cfg["seed"] = _resolve_seed(args.seed, cfg)
    if args.out:
        cfg["output_dir"] = args.out
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    elif "jobs" not in cfg:
        cfg["jobs"] = default_jobs()
    try:
        spec = ExperimentSpec.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    result = run_experiment(spec)
    for report in result.reports:
        print(
            f"{report.dataset_id} {report.method} @{report.eval_rate_hz:g}Hz: "
            f"corr={report.mean('correlation'):.4f} "
            f"ig={report.mean('info_gain_bits_per_bin'):.4f} bits/bin "
            f"rel={report.relative_info_gain:.4f}"
        )
    if spec.output_dir:
        print(f"wrote reports to {spec.output_dir}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        if (path / "dataset.json").is_file():
            recs = load_dataset(path)
            spikes = sum(r.n_spikes for r in recs)
            print(f"dataset: {len(recs)} cells, {spikes} spikes")
            for r in recs:
                print(
                    f"  {r.cell_id}: {r.fluorescence.size} samples at {r.fluor_rate_hz:g} Hz, "
                    f"{r.n_spikes} spikes, indicator {r.indicator}"
                )
            return 0
        if (path / "meta.json").is_file():
            r = load_recording(path)
            print(
                f"bundle {r.cell_id} ({r.dataset_id}): {r.fluorescence.size} samples at "
                f"{r.fluor_rate_hz:g} Hz, {r.n_spikes} spikes, duration {r.duration_s:g} s"
            )
            return 0
        raise DataError("directory is neither a dataset nor a bundle", path)
    doc = _load_json(path)
    if "kind" in doc and "members" in doc:
        ens = load_ensemble(path)
        print(
            f"model: kind={ens.kind}, {len(ens.members)} members, "
            f"{ens.pca_basis.n_kept} features, window {ens.window_ms:g} ms at {ens.bin_rate_hz:g} Hz"
        )
        return 0
    if "per_cell" in doc:
        report = load_report(path)
        print(
            f"report: {report.method} on {report.dataset_id} @{report.eval_rate_hz:g}Hz, "
            f"{len(report.per_cell)} cells, mean corr {report.mean('correlation'):.4f}"
        )
        return 0
    if "protocol" in doc:
        spec = ExperimentSpec.from_dict(doc)
        print(f"experiment spec: protocol={spec.protocol}, datasets={spec.datasets}")
        return 0
    raise DataError("unrecognized JSON document", path)


# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="spikeforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="SynthConfig JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="resample, detrend, and normalize recordings")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bundle", help="one recording bundle directory")
    src.add_argument("--data", help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train an ensemble on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--config", help="TrainConfig JSON (may add window_ms, pca_variance_threshold)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict per-bin spike rates for one bundle")
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--bundle", required=True, help="recording bundle directory")
    p.add_argument("--out", required=True, help="rates CSV path")
    p.add_argument("--sample", action="store_true", help="also sample a spike train")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score a rates CSV against a bundle's spikes")
    p.add_argument("--pred", required=True, help="rates CSV from 'infer'")
    p.add_argument("--bundle", required=True, help="recording bundle directory")
    p.add_argument("--rate", type=float, default=25.0, help="evaluation rate in Hz")
    p.add_argument("--calibration", help="report JSON or knots JSON with the monotone transform")
    p.add_argument("--out", help="write the metrics JSON here as well")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a benchmark protocol from a spec file")
    p.add_argument("--spec", required=True, help="ExperimentSpec JSON")
    p.add_argument("--out", help="output directory (overrides the spec)")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"parallel folds (default from spec; machine has {default_jobs()})")
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect", help="summarize and validate a bundle/dataset/model/report")
    p.add_argument("path", help="path to inspect")
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "verbose", False):
            logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
