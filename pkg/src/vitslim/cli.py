"""Command-line entry point: ``vitslim <command> ...``.

Every failure prints one line ``error: <kind>: <message>`` to stderr and
exits with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, data, flops, gradcheck, lifemap, train, vit
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError, VitSlimError
from .images import read_image
from .inference import SlimEngine, count_slim_ops
from .schedule import SlimSchedule

EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def _int_list(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model_args(p, preset_default="toy") -> None:
    g = p.add_argument_group("model config")
    g.add_argument("--preset", default=preset_default, help=f"base config ({', '.join(sorted(vit.PRESETS))})")
    g.add_argument("--config", type=Path, help="JSON file with config fields applied over the preset")
    g.add_argument("--rho", type=float)
    g.add_argument("--temperature-u", type=float, dest="U")
    g.add_argument("--t-slim", type=_int_list)
    g.add_argument("--t-base", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--paper-literal-beta", action="store_true", default=None)
    g.add_argument("--beta-after-tbase-only", action="store_true", default=None)


def _read_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return raw


def _overrides(args) -> dict:
    out = {}
    for key in ("rho", "U", "t_slim", "t_base", "paper_literal_beta", "beta_after_tbase_only"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def resolve_config(args, base: vit.ViTConfig | None = None) -> vit.ViTConfig:
    """Preset (or a checkpoint's config), then the JSON file, then flags."""
    fields = base.to_dict() if base is not None else vit.preset(args.preset).to_dict()
    if args.config is not None:
        fields.update(_read_json(args.config))
    fields.update(_overrides(args))
    return vit.ViTConfig.from_dict(fields)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _weights(args, config=None) -> vit.ModelWeights:
    if getattr(args, "checkpoint", None) is not None:
        weights = load_checkpoint(args.checkpoint)
        return vit.ModelWeights(resolve_config(args, weights.config), weights.params)
    config = config or resolve_config(args)
    return vit.init_weights(config, args.seed)


def cmd_schedule(args) -> int:
    config = resolve_config(args)
    sched = SlimSchedule.from_config(config)
    _emit({**sched.to_dict(), "t_base": config.t_base})
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    fields = dict(train.DESK)
    if args.train_config is not None:
        fields.update(_read_json(args.train_config))
    fields["seed"] = args.seed
    tc = train.TrainConfig.from_dict(fields)
    samples = data.make_synth_dataset(args.data_seed, args.train_size, grid=config.grid,
                                      classes=config.num_classes, patch=config.p, channels=config.channels)
    test = data.make_synth_dataset(args.data_seed + 10_000, args.test_size, grid=config.grid,
                                   classes=config.num_classes, patch=config.p, channels=config.channels)
    log_fh = open(args.log, "w") if args.log else None
    try:
        def log(record):
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")

        history = train.History()
        if args.init is not None:
            weights = load_checkpoint(args.init)
            weights = vit.ModelWeights(config, weights.params)
        else:
            weights = vit.init_weights(config, args.seed)
            train.pretrain_dense(weights, samples, tc, log, history)
        dense_acc = train.evaluate(weights, test, config.replace(rho=1.0))
        run = train.train_single_stage if args.mode == "single-stage" else train.train_two_stage
        run(weights, samples, tc, log, history)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(args.out, weights)
    _emit({
        "checkpoint": str(args.out),
        "mode": args.mode,
        "dense_accuracy": dense_acc,
        "slim_accuracy": train.evaluate(weights, test),
        "epoch_losses": history.epochs,
        "rejected_epoch_losses": history.rejected,
        **train.salient_life_stats(weights, test),
    })
    return 0


def _load_images(paths, config) -> np.ndarray:
    shape = (config.image_side, config.image_side, config.channels)
    return np.stack([read_image(p, shape).data for p in paths]).astype(np.float32)


def cmd_infer(args) -> int:
    weights = _weights(args)
    images = _load_images(args.images, weights.config)
    engine = SlimEngine(weights)
    logits = engine.infer(images)
    for path, row in zip(args.images, logits):
        _emit({"image": str(path), "label": int(np.argmax(row)), "logits": [float(v) for v in row]})
    if args.counters:
        _emit({"counters": count_slim_ops(engine)})
    return 0


def cmd_bench(args) -> int:
    config = resolve_config(args)
    dense = flops.count_flops(config.replace(rho=1.0))
    slim = flops.count_flops(config)
    report = {
        "config": config.to_dict(),
        "flops": {"dense": dense.to_dict(), "slim": slim.to_dict(),
                  "reduction_percent": flops.reduction_percent(dense, slim)},
        "slim_overhead": flops.compare_slim_overhead(config),
    }
    if args.flops_only:
        rows = [{"rho": r, "gflops": flops.count_flops(config.replace(rho=r)).gflops} for r in args.rhos]
    else:
        weights = _weights(args, config)
        rows = bench.throughput_sweep(weights, args.rhos, args.batch, args.iters, blas_threads=args.blas_threads,
                                      seed=args.seed)
        report["throughput_ordering_matches_flops"] = bench.ordering_matches(rows)
        print(bench.format_table(rows), file=sys.stderr)
    report["sweep"] = rows
    if args.out is not None:
        prefix = str(args.out)
        Path(prefix).parent.mkdir(parents=True, exist_ok=True)
        with open(f"{prefix}.json", "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
        from .plotting import flops_figure, throughput_figure

        flops_figure(slim, f"{prefix}_flops.png")
        if not args.flops_only:
            throughput_figure(rows, f"{prefix}_throughput.png")
    _emit(report)
    return 0


def cmd_lifemap(args) -> int:
    weights = _weights(args)
    config = weights.config
    images = _load_images([args.image], config)
    engine = SlimEngine(weights)
    logits, tau = engine.infer_with_lives(images)
    lives = np.full(config.N, float(config.T)) if tau is None else tau[0].astype(np.float64)
    Path(str(args.out)).parent.mkdir(parents=True, exist_ok=True)
    written = lifemap.export_lifemap(lives, engine.schedule, args.out, config.t_base, figure=not args.no_figure)
    _emit({"label": int(np.argmax(logits[0])), "files": written})
    return 0


def cmd_gradcheck(args) -> int:
    config = resolve_config(args)
    results = gradcheck.end_to_end(config, args.seed, eps=args.eps, max_entries=args.max_entries)
    worst = max(r.rel_err for r in results)
    for r in results:
        _emit({"tensor": r.name, "entries": r.entries, "rel_err": r.rel_err, "ok": r.ok(args.tol)})
    _emit({"max_rel_err": worst, "tol": args.tol, "ok": worst <= args.tol})
    if worst > args.tol:
        raise NumericError(f"gradient mismatch: max relative error {worst:.3g} exceeds {args.tol:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitslim", description="Patch-slimming vision transformer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schedule", help="print patch counts and target life moments")
    _model_args(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train", help="pre-train on synthetic data, then fit lives")
    _model_args(p, preset_default="desk")
    p.add_argument("--out", type=Path, required=True, help="checkpoint to write")
    p.add_argument("--train-config", type=Path, help="JSON file with training fields")
    p.add_argument("--mode", choices=("two-stage", "single-stage"), default="two-stage")
    p.add_argument("--init", type=Path, help="start from this checkpoint and skip pre-training")
    p.add_argument("--log", type=Path, help="line-delimited JSON step log")
    p.add_argument("--train-size", type=int, default=8000)
    p.add_argument("--test-size", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="classify PGM/PPM images")
    _model_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--counters", action="store_true", help="also print life-module call counters")
    p.add_argument("images", nargs="+", type=Path)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="FLOPs and throughput reports")
    _model_args(p, preset_default="deit-s")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--rhos", type=lambda s: tuple(float(v) for v in s.split(",")), default=(1.0, 0.9, 0.8, 0.7))
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=bench.MIN_TIMED)
    p.add_argument("--blas-threads", type=int, default=1)
    p.add_argument("--flops-only", action="store_true")
    p.add_argument("--out", type=Path, help="prefix for the JSON report and figures")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("lifemap", help="export lives and keep masks for one image")
    _model_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output path prefix")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_lifemap)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    _model_args(p, preset_default="micro")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=12)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except VitSlimError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.kind}: {msg}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc.filename or ''}: {exc.strerror or exc}".replace(": : ", ": "), file=sys.stderr)
    except (ValueError, TypeError) as exc:
        # config dictionaries with wrong field types end up here
        print(f"error: config: {' '.join(str(exc).split())}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
