"""Command-line front end: ``lowram train | quantize | predict | sweep | synth``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import SynthSpec, format_libsvm, generate_synthetic, read_libsvm, to_csr
from .errors import ConfigError, LowRamError, ParseError
from .evaluation import (
    CSV_SCHEMA_VERSION,
    ProgressiveCSVWriter,
    auc_loss_relative,
    evaluate_fixed,
    progressive_validate,
    write_tradeoff_csv,
)
from .model_store import (
    ModelHistogram,
    load,
    memory_report,
    optimal_bits_per_value,
    quantize_for_prediction,
    save,
)
from .ogd_train import COUNTERS, MODES, OGDTrainer, TrainConfig

log = logging.getLogger("lowram")

OUT_DIR_ENV = "LOWRAM_OUT_DIR"
DEFAULT_OUT_DIR = "lowram-out"


class _HashingReader(io.RawIOBase):
    """Pass-through binary reader that hashes everything it hands out."""

    def __init__(self, raw):
        self.raw = raw
        self.sha = hashlib.sha256()

    def readable(self):
        return True

    def readinto(self, buf):
        data = self.raw.read(len(buf))
        if not data:
            return 0
        n = len(data)
        buf[:n] = data
        self.sha.update(data)
        return n


def _file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()


def _json_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def derive_seed(core: dict, point) -> int:
    """Seed for one sweep point, hashed from the run description and the point."""
    blob = json.dumps({"manifest": core, "point": point}, sort_keys=True).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


# ---------------------------------------------------------------------------
# argument parsing


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--mode", choices=MODES, default=d.mode)
    g.add_argument("--counter", choices=COUNTERS, default=None,
                   help="learning-rate counts (default: global)")
    g.add_argument("--alpha", type=float, default=d.alpha)
    g.add_argument("--gamma", type=float, default=d.gamma)
    g.add_argument("--R", type=float, default=d.R, help="feasible half-width (power of two)")
    g.add_argument("--G", type=float, default=d.G, help="gradient bound; larger values are clipped")
    g.add_argument("--n", type=int, default=d.n)
    g.add_argument("--m", type=int, default=d.m)
    g.add_argument("--base", type=float, default=d.base)
    g.add_argument("--max-m", type=int, default=d.max_m)
    g.add_argument("--no-project", action="store_true")
    g.add_argument("--seed", type=int, default=d.seed)


def _add_input_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--input", help="libsvm file (optionally gzip) or '-' for stdin")
    src.add_argument("--synthetic", help="synthetic stream spec (JSON)")
    p.add_argument("--raw-values", action="store_true",
                   help="keep feature values instead of binarizing them")
    p.add_argument("--fail-fast", action="store_true", help="abort on the first malformed line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowram", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lowram {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with progressive validation")
    _add_input_flags(p)
    _add_train_flags(p)
    p.add_argument("--out-dir", default=None,
                   help=f"output directory (default: ${OUT_DIR_ENV} or {DEFAULT_OUT_DIR})")

    p = sub.add_parser("quantize", help="round a model to a coarser grid for prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="score examples with a fixed model")
    p.add_argument("--model", required=True)
    _add_input_flags(p)
    p.add_argument("--out", required=True, help="score CSV path")

    p = sub.add_parser("sweep", help="memory/accuracy tradeoff sweep")
    p.add_argument("--kind", required=True, choices=("train-m", "train-gamma", "predict-m"))
    p.add_argument("--values", required=True, help="comma-separated m or gamma values")
    _add_input_flags(p, required=False)
    _add_train_flags(p)
    p.add_argument("--model", help="trained model (predict-m)")
    p.add_argument("--test-input", help="held-out libsvm data (predict-m)")
    p.add_argument("--test-synthetic", help="held-out synthetic spec (predict-m)")
    p.add_argument("--repeats", type=int, default=1, help="roundings averaged per point (predict-m)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="tradeoff CSV path")

    p = sub.add_parser("synth", help="write a synthetic stream as libsvm text")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config_from_args(args, **overrides) -> TrainConfig:
    counter = args.counter or "global"
    kwargs = dict(
        mode=args.mode, counter=counter, alpha=args.alpha, gamma=args.gamma, R=args.R, G=args.G,
        n=args.n, m=args.m, base=args.base, max_m=args.max_m, project=not args.no_project,
        seed=args.seed,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


class _Source:
    """An example source plus the digest recorded in manifests."""

    def __init__(self, args, input_attr="input", synth_attr="synthetic"):
        self.path = getattr(args, input_attr, None)
        self.spec_path = getattr(args, synth_attr, None)
        self.binarize = not getattr(args, "raw_values", False)
        self.fail_fast = getattr(args, "fail_fast", False)
        self.errors: list[ParseError] = []
        self._stdin_reader = None
        if self.spec_path:
            self.spec = SynthSpec.load(self.spec_path)
        else:
            self.spec = None

    def examples(self):
        if self.spec is not None:
            return iter(generate_synthetic(self.spec))
        if self.path == "-":
            self._stdin_reader = _HashingReader(sys.stdin.buffer)
            return read_libsvm(io.BufferedReader(self._stdin_reader), self.binarize,
                               self.fail_fast, self.errors)
        return read_libsvm(self.path, self.binarize, self.fail_fast, self.errors)

    def describe(self) -> dict:
        if self.spec is not None:
            return {"synthetic": self.spec.to_dict(), "sha256": _json_digest(self.spec.to_dict())}
        if self.path == "-":
            digest = self._stdin_reader.sha.hexdigest() if self._stdin_reader else None
            return {"path": "-", "sha256": digest}
        return {"path": self.path, "sha256": _file_digest(self.path)}


def _manifest(command: str, config: dict, seed, inputs: list, outputs: dict, extra=None) -> dict:
    out = {
        "artifact_version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "csv_schema_version": CSV_SCHEMA_VERSION,
    }
    if extra:
        out.update(extra)
    return out


def _report_parse_errors(source: _Source) -> None:
    if source.errors:
        print(f"warning: skipped {len(source.errors)} malformed line(s)", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _config_from_args(args)
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR))
    out_dir.mkdir(parents=True, exist_ok=True)
    source = _Source(args)
    trainer = OGDTrainer(config)
    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        result = progressive_validate(trainer, source.examples(), on_record=ProgressiveCSVWriter(fh))
    _report_parse_errors(source)
    model = trainer.to_packed()
    save(model, out_dir / "model.lrm")
    report = memory_report(model)
    manifest = _manifest(
        "train", config.to_dict(), config.seed, [source.describe()],
        {"model": "model.lrm", "metrics": "metrics.csv"},
        {"summary": _clean(result.summary), "bits_per_coordinate": report.bits_per_coordinate,
         "coordinates": report.coordinates, "skipped_lines": len(source.errors),
         "gradient_clips": trainer.stats.gradient_clips,
         "saturation_events": trainer.stats.saturation_events},
    )
    _write_json(out_dir / "manifest.json", manifest)
    s = result.summary
    print(f"examples            {s['examples']}")
    print(f"progressive logloss {s['logloss']:.6f}")
    print(f"error rate          {s['error_rate']:.6f}")
    print(f"auc                 {s['auc']:.6f}")
    print(f"layout              {report.layout}")
    print(f"bits/coordinate     {report.bits_per_coordinate:g}")
    print(f"coordinates         {report.coordinates}")
    print(f"coefficient bytes   {report.total_bytes:g}")
    return 0


def _clean(summary: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in summary.items()}


def cmd_quantize(args) -> int:
    model = load(args.model)
    rng = np.random.default_rng(args.seed)
    q = quantize_for_prediction(model, args.m, rng, n=args.n)
    save(q, args.out)
    report = memory_report(q)
    bits = optimal_bits_per_value(ModelHistogram.from_model(q)) if len(q) else 0.0
    _write_json(args.out + ".manifest.json", _manifest(
        "quantize", {"m": args.m, "n": args.n}, args.seed,
        [{"path": args.model, "sha256": _file_digest(args.model)}],
        {"model": os.path.basename(args.out)},
        {"bits_per_coordinate": report.bits_per_coordinate, "opt_bits_per_value": bits},
    ))
    print(f"layout              {report.layout}")
    print(f"bits/coordinate     {report.bits_per_coordinate:g}")
    print(f"coordinates         {report.coordinates}")
    print(f"coefficient bytes   {report.total_bytes:g}")
    print(f"opt bits/value      {bits:.4f}")
    return 0


def cmd_predict(args) -> int:
    model = load(args.model)
    source = _Source(args)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("ordinal", "probability"))
        for t, ex in enumerate(source.examples(), start=1):
            writer.writerow((t, repr(model.predict(ex.indices, ex.values))))
    _report_parse_errors(source)
    _write_json(args.out + ".manifest.json", _manifest(
        "predict", {}, None,
        [{"path": args.model, "sha256": _file_digest(args.model)}, source.describe()],
        {"scores": os.path.basename(args.out)},
    ))
    return 0


def _parse_values(text: str, kind: str):
    try:
        if kind == "train-gamma":
            return [float(v) for v in text.split(",") if v.strip()]
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    values = _parse_values(args.values, args.kind)
    if args.workers < 1 or args.repeats < 1:
        raise ConfigError("--workers and --repeats must be at least 1")
    base = _config_from_args(args)
    core = {"kind": args.kind, "config": base.to_dict(), "values": values}
    if args.kind == "predict-m":
        rows, inputs = _sweep_predict(args, values, core)
    else:
        rows, inputs = _sweep_train(args, values, base, core)
    with open(args.out, "w", newline="") as fh:
        write_tradeoff_csv(fh, rows)
    _write_json(args.out + ".manifest.json", _manifest(
        "sweep", core, base.seed, inputs, {"tradeoff": os.path.basename(args.out)},
        {"point_seeds": [r["seed"] for r in rows]},
    ))
    for row in rows:
        print(f"{row['sweep']} point={row['point']} bits/coord={row['bits_per_coordinate']:.4g} "
              f"logloss={row['logloss']:.6f}")
    return 0


def _sweep_train(args, values, base: TrainConfig, core):
    if not (args.input or args.synthetic):
        raise ConfigError("train sweeps need --input or --synthetic")
    if args.input == "-":
        raise ConfigError("sweeps re-read their input; pass a file instead of stdin")
    source = _Source(args)

    def run(value):
        seed = derive_seed(core, value)
        if args.kind == "train-m":
            cfg = replace(base, mode="fixed", m=value, seed=seed)
        else:
            cfg = replace(base, mode="adaptive", gamma=value, seed=seed)
        trainer = OGDTrainer(cfg)
        res = progressive_validate(trainer, source.examples())
        report = memory_report(trainer.to_packed())
        s = res.summary
        return {
            "sweep": args.kind, "point": value, "mode": cfg.mode, "counter": cfg.counter,
            "m": cfg.m if cfg.mode == "fixed" else "", "gamma": cfg.gamma, "seed": seed,
            "bits_per_coordinate": report.bits_per_coordinate, "examples": s["examples"],
            "logloss": s["logloss"], "error_rate": s["error_rate"], "auc": s["auc"],
        }

    rows = _ordered_map(run, values, args.workers)
    return rows, [source.describe()]


def _sweep_predict(args, values, core):
    if not args.model:
        raise ConfigError("predict-m sweeps need --model")
    if not (args.test_input or args.test_synthetic):
        raise ConfigError("predict-m sweeps need --test-input or --test-synthetic")
    model = load(args.model)
    source = _Source(args, "test_input", "test_synthetic")
    X, y = to_csr(source.examples())
    dim = max(X.shape[1], int(model.indices.max()) + 1 if len(model) else 0)
    X.resize((X.shape[0], dim))
    reference = evaluate_fixed(model, X, y)

    def run(m):
        seed = derive_seed(core, m)
        rng = np.random.default_rng(seed)
        losses, aucs, errs, bits = [], [], [], []
        for _ in range(args.repeats):
            q = quantize_for_prediction(model, m, rng, n=args.n)
            ev = evaluate_fixed(q, X, y)
            losses.append(ev["logloss"])
            aucs.append(ev["auc"])
            errs.append(ev["error_rate"])
            bits.append(optimal_bits_per_value(ModelHistogram.from_model(q)) if len(q) else 0.0)
        loss = float(np.mean(losses))
        auc_q = float(np.mean(aucs))
        try:
            rel = auc_loss_relative(auc_q, reference["auc"])
        except LowRamError:
            rel = math.nan
        return {
            "sweep": "predict-m", "point": m, "mode": "fixed", "counter": "none", "m": m,
            "gamma": "", "seed": seed, "bits_per_coordinate": float(args.n + m + 1),
            "opt_bits_per_value": float(np.mean(bits)), "examples": int(X.shape[0]),
            "logloss": loss, "error_rate": float(np.mean(errs)), "auc": auc_q,
            "auc_loss_rel_pct": rel, "added_logloss": loss - reference["logloss"],
        }

    rows = _ordered_map(run, values, args.workers)
    inputs = [{"path": args.model, "sha256": _file_digest(args.model)}, source.describe()]
    return rows, inputs


def _ordered_map(fn, values, workers):
    if workers == 1:
        return [fn(v) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, values))


def cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec)
    with open(args.out, "w") as fh:
        for ex in generate_synthetic(spec):
            fh.write(format_libsvm(ex) + "\n")
    return 0


COMMANDS = {
    "train": cmd_train,
    "quantize": cmd_quantize,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"lowram {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, LowRamError, json.JSONDecodeError, TypeError) as exc:
        print(f"lowram {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
