"""Command-line entry point: ``cloc gen|train|eval|export|check``.

Exit codes: 0 success, 1 runtime failure, 2 bad input, 3 missing or
corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import BiasSpec, DataFormatError, SyntheticSpec, generate, inject_bias, load_csv, save_csv, train_test
from .metrics import evaluate, export_embeddings, margin_report
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .sampler import UnsatisfiableBatchSpec
from .trainer import TrainConfig, TrainingError, train_cloc, write_logs_csv

EXIT_OK, EXIT_RUNTIME, EXIT_BAD_INPUT, EXIT_MISSING = 0, 1, 2, 3

logger = logging.getLogger("cloc")


class BadInput(Exception):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise BadInput(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise BadInput(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise BadInput(f"{path}: expected a JSON object")
    return obj


def _json_or_pairs(text: str) -> dict:
    """Parse ``{"boundary": 2}``, a path to such a file, or ``boundary=2,p_up=0.6``."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise BadInput(f"malformed JSON: {exc}") from None
    if Path(text).is_file():
        return _read_json(text)
    out = {}
    for item in filter(None, text.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise BadInput(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            out[key.strip()] = val
    return out


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn

    return {"cloc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def write_manifest(path, command: str, argv, config: dict, seed, inputs, outputs, t0: float) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "versions": _versions(),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "timings": {"wall_seconds": round(time.perf_counter() - t0, 3)},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------------

def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    raw = _read_json(args.spec)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise BadInput(f"{args.spec}: {exc}") from None
    if args.test_out:
        data, test = train_test(spec, args.n_test)
    else:
        data, test = generate(spec), None
    bias = None
    if args.bias:
        try:
            bias = BiasSpec.from_dict(_json_or_pairs(args.bias))
            data = inject_bias(data, bias)
        except (TypeError, ValueError) as exc:
            raise BadInput(f"--bias: {exc}") from None
    out = Path(args.out)
    save_csv(data, out)
    outputs = [out]
    if test is not None:
        save_csv(test, args.test_out)
        outputs.append(Path(args.test_out))
    config = {"spec": spec.to_dict(), "bias": None if bias is None else vars(bias), "n_test": args.n_test}
    manifest = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    write_manifest(manifest, "gen", args.argv, config, spec.seed, [args.spec], outputs, t0)
    print(json.dumps({"rows": len(data), "counts": data.class_counts().tolist(), "out": str(out)}))
    return EXIT_OK


def _load_data(path, n_classes=None):
    if not Path(path).is_file():
        raise BadInput(f"{path}: no such file")
    try:
        return load_csv(path, n_classes)
    except DataFormatError as exc:
        raise BadInput(str(exc)) from None


def _train_config(args) -> TrainConfig:
    raw = _read_json(args.config) if args.config != "-" else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.margin_mode:
        mode = args.margin_mode
        if mode.startswith("fixed:"):
            try:
                raw.update(margin_mode="all_fixed", margin_constant=float(mode.split(":", 1)[1]))
            except ValueError:
                raise BadInput(f"--margin-mode {mode!r}: value is not a number") from None
        elif mode in ("per_pair", "single"):
            raw["margin_mode"] = mode
        else:
            raise BadInput(f"--margin-mode must be per_pair, single or fixed:<v>, got {mode!r}")
    overrides = dict(raw.get("fixed_overrides", {}))
    for item in args.fix_margin or []:
        key, sep, val = item.partition("=")
        try:
            overrides[str(int(key))] = float(val)
        except ValueError:
            raise BadInput(f"--fix-margin expects <boundary>=<value>, got {item!r}") from None
        if not sep:
            raise BadInput(f"--fix-margin expects <boundary>=<value>, got {item!r}")
    if overrides:
        raw["fixed_overrides"] = overrides
    if args.phase1_only:
        raw["phase1_only"] = True
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise BadInput(f"config: {exc}") from None
    return cfg.without_precautions() if args.no_precautions else cfg


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _train_config(args)
    data = _load_data(args.data)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        result = train_cloc(data, cfg)
    except (UnsatisfiableBatchSpec, ValueError) as exc:
        raise BadInput(str(exc)) from None
    ckpt, log_path, report_path = outdir / "checkpoint.json", outdir / "trainlog.csv", outdir / "margins.json"
    save_checkpoint(ckpt, result.model, result.margins,
                    {"config": cfg.to_dict(), "data_sha256": sha256(args.data), "n_classes": data.n_classes})
    notes = {"seed": cfg.seed, "phase1_stop": result.phase1.stop_reason}
    if result.phase2 is not None:
        notes.update(phase2_stop=result.phase2.stop_reason, phase2_best_epoch=result.phase2.notes["best_epoch"])
    write_logs_csv(log_path, result.logs, notes)
    report = margin_report(result.margins)
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(outdir / "manifest.json", "train", args.argv, cfg.to_dict(), cfg.seed,
                   [p for p in (args.config, args.data) if p != "-"], [ckpt, log_path, report_path], t0)
    print(json.dumps({"outdir": str(outdir), "margins": report["boundaries"],
                      "phase1_epochs": len(result.phase1),
                      "phase2_epochs": 0 if result.phase2 is None else len(result.phase2)}))
    return EXIT_OK


def _load_model(path):
    try:
        model, margins, meta = load_checkpoint(path)
    except CheckpointError as exc:
        raise _Missing(str(exc)) from None
    return model, margins, meta


class _Missing(Exception):
    pass


def cmd_eval(args) -> int:
    model, _, _ = _load_model(args.checkpoint)
    data = _load_data(args.data, model.n_classes)
    if data.n_features != model.n_features:
        raise BadInput(f"{args.data} has {data.n_features} features, model expects {model.n_features}")
    report = evaluate(model, data, use_clean=not args.noisy_labels, normalization=args.normalization)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_export(args) -> int:
    t0 = time.perf_counter()
    model, _, _ = _load_model(args.checkpoint)
    data = _load_data(args.data, model.n_classes)
    if data.n_features != model.n_features:
        raise BadInput(f"{args.data} has {data.n_features} features, model expects {model.n_features}")
    out = Path(args.out)
    export_embeddings(model, data, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "export", args.argv, {}, None,
                   [args.checkpoint, args.data], [out], t0)
    print(json.dumps({"rows": len(data), "out": str(out)}))
    return EXIT_OK


def cmd_check(args) -> int:
    from .verify import run_all

    ok = True
    for r in run_all(quick=args.quick):
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if ok else EXIT_RUNTIME


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloc", description="Ordinal classification with learnable margins.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic ordinal dataset")
    g.add_argument("spec", help="JSON file with SyntheticSpec fields")
    g.add_argument("out", help="output CSV")
    g.add_argument("--bias", help="bias spec: JSON, a JSON file, or boundary=2,p_up=0.6,p_down=0.3")
    g.add_argument("--test-out", help="also write an independent test draw here")
    g.add_argument("--n-test", type=int, default=None, help="test samples per class")
    g.add_argument("--seed", type=int, default=None, help="override the spec seed")
    g.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="two-phase training")
    t.add_argument("config", help="JSON file with TrainConfig keys, or - for defaults")
    t.add_argument("data", help="training CSV")
    t.add_argument("outdir")
    t.add_argument("--margin-mode", help="per_pair, single, or fixed:<value>")
    t.add_argument("--fix-margin", action="append", metavar="B=V", help="fix boundary B to margin V")
    t.add_argument("--phase1-only", action="store_true")
    t.add_argument("--no-precautions", action="store_true",
                   help="ReLU margin activation, near-zero init, no phase-one early stop")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print an evaluation report as JSON")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--normalization", choices=("pair", "total", "per_class"), default="pair",
                   help="denominator for boundary error rates")
    e.add_argument("--noisy-labels", action="store_true", help="score against label, ignoring clean_label")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write embeddings and their 2-D PCA projection")
    x.add_argument("checkpoint")
    x.add_argument("data")
    x.add_argument("out")
    x.set_defaults(func=cmd_export)

    c = sub.add_parser("check", help="run gradient and oracle checks")
    c.add_argument("--quick", action="store_true")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_INPUT
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except BadInput as exc:
        print(f"cloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except _Missing as exc:
        print(f"cloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as exc:
        print(f"cloc {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"cloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
