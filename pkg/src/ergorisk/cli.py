"""``ergorisk`` command line.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, DataError, DomainError, NumericFault, SampleRejected, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def _reba_config(args):
    from .reba import load_config

    return load_config(args.tables)


def cmd_score(args) -> int:
    from .pose_io import parse_landmark_file
    from .reba import score_skeletons

    tables, thresholds = _reba_config(args)
    skeletons = parse_landmark_file(args.input)
    results = score_skeletons(skeletons, None, thresholds, tables, args.vis_threshold, args.threads)
    for s, res in zip(skeletons, results):
        if isinstance(res, SampleRejected):
            print(f"{s.id}: rejected: {res.__cause__ or res}", file=sys.stderr)
            continue
        print(_dump(res.to_record(s.id)))
    return EXIT_OK


def cmd_annotate(args) -> int:
    from .reba import annotate_dataset

    tables, thresholds = _reba_config(args)
    summary = annotate_dataset(args.input, args.out, None, thresholds, tables, args.vis_threshold, args.threads)
    if args.json:
        print(_dump(summary.to_json()))
    else:
        print(f"accepted {summary.accepted}, rejected {len(summary.rejects)}")
        for c, n in sorted(summary.counts.items()):
            print(f"  class {c}: {n}")
        for sid, reason in summary.rejects:
            print(f"  rejected {sid}: {reason}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import gen_dataset

    tables, thresholds = _reba_config(args)
    manifest = gen_dataset(args.n, args.seed, args.out, args.size, thresholds, tables, not args.no_ppm)
    if args.json:
        print(_dump(manifest.to_json()))
    else:
        hist = " ".join(f"{c}:{n}" for c, n in manifest.to_json()["histogram"].items())
        print(f"wrote {len(manifest.ids)} samples to {args.out} (classes {hist})")
    return EXIT_OK


def _model_config(spec: str):
    from .model import ViskGatConfig

    if Path(spec).is_file():
        return ViskGatConfig.load(spec)
    try:
        return ViskGatConfig.preset(spec)
    except (KeyError, ValueError, ConfigError) as exc:
        raise ConfigError(f"--model-cfg {spec!r} is neither a JSON file nor a preset name") from exc


def cmd_train(args) -> int:
    from dataclasses import replace

    from .training import TrainConfig, format_log, load_dataset, train

    model_cfg = _model_config(args.model_cfg)
    cfg = TrainConfig.load(args.train_cfg) if args.train_cfg else TrainConfig()
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = replace(cfg, **overrides)
    data = load_dataset(args.data)

    def progress(row):
        if not args.json:
            print(f"epoch {row['epoch']:>4}  lr {row['lr']:.3e}  loss {row['train_loss']:.4f}  "
                  f"train_acc {row['train_acc']:.4f}  val_acc {row['val_acc']:.4f}", flush=True)

    result = train(model_cfg, cfg, data, out=args.out, progress=progress)
    log_path = args.log or f"{args.out}.log.csv"
    Path(log_path).write_text(format_log(result.log), encoding="utf-8")
    summary = {"best_epoch": result.best_epoch, "best_score": result.best_score, "epochs_run": len(result.log),
               "checkpoint": str(args.out), "log": str(log_path)}
    print(_dump(summary) if args.json else f"best epoch {result.best_epoch} (score {result.best_score:.4f}); "
          f"checkpoint {args.out}, log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import load_model
    from .training import SplitIndices, evaluate, load_dataset, stratified_split

    params, cfg, meta = load_model(args.ckpt)
    data = load_dataset(args.data)
    if "split" in meta and len(data) == sum(len(v) for v in meta["split"].values()):
        split = SplitIndices(**meta["split"])
    else:
        train_cfg = meta.get("train", {})
        split = stratified_split(data.labels, train_cfg.get("split_fractions", (0.7, 0.1, 0.2)),
                                 train_cfg.get("seed", 0))
    report = evaluate(params, cfg, data, split.get(args.split))
    if args.report:
        Path(args.report).write_text(report.dumps(), encoding="utf-8")
    print(report.dumps() if args.json else report.to_text(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autodiff.gradcheck import model_check, primitive_checks

    seed = args.seed or 0
    results = []
    for s in range(seed, seed + args.seeds):
        if args.what in ("all", "primitives"):
            results += primitive_checks(s, args.h)
        if args.what in ("all", "model"):
            results.append(model_check(args.config, s, args.h))
    ok = all(r.ok(args.tol) for r in results)
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    if args.json:
        print(_dump({"ok": ok, "tolerance": args.tol, "max_rel_error": worst}))
    else:
        for name, err in worst.items():
            print(f"{'PASS' if err <= args.tol else 'FAIL'} {name}: max relative error {err:.3e}")
    if not ok:
        print(f"gradient check failed at tolerance {args.tol}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(args.seed or 0)
    if args.json:
        print(_dump([{"name": r.name, "ok": r.ok, "detail": r.detail} for r in results]))
    else:
        for r in results:
            print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--threads", type=int, default=1, help="worker threads where supported")
    tables = argparse.ArgumentParser(add_help=False)
    tables.add_argument("--tables", default=None, help="REBA tables JSON (default: $ERGORISK_TABLES or built-in)")
    tables.add_argument("--vis-threshold", type=float, default=0.5, help="landmark visibility cut-off")

    p = _Parser(prog="ergorisk", description="Ergonomic risk scoring and multimodal classification.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("score", parents=[common, tables], help="REBA-score skeletons, one JSON line each")
    s.add_argument("--in", dest="input", required=True, help="landmark file (.jsonl or .csv)")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("annotate", parents=[common, tables], help="label a skeleton file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="output label JSONL")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("synth", parents=[common, tables], help="generate a synthetic stick-figure dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=64, help="image side in pixels")
    s.add_argument("--no-ppm", action="store_true", help="skip per-sample PPM files")
    s.set_defaults(func=cmd_synth, seed=0)

    s = sub.add_parser("train", parents=[common], help="train the classifier")
    s.add_argument("--data", required=True, help="dataset directory from `synth`")
    s.add_argument("--model-cfg", default="desk", help="model config JSON or preset (full, desk, desk_small, tiny)")
    s.add_argument("--train-cfg", default=None, help="training config JSON")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", default=None, help="epoch log CSV (default: <out>.log.csv)")
    s.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--report", default=None, help="write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--what", default="all", choices=["all", "primitives", "model"])
    s.add_argument("--config", default="tiny", help="model preset for the full-model check")
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--h", type=float, default=1e-4, help="finite-difference step")
    s.add_argument("--tol", type=float, default=1e-3, help="max relative error")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", parents=[common], help="run the bundled invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "threads", 1) < 1:
        print("ergorisk: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericFault as exc:
        print(f"ergorisk: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, DomainError, ShapeError) as exc:
        print(f"ergorisk: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"ergorisk: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
