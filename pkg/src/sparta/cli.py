"""Command-line entry point: ``sparta <verb> --config PATH [--seed N] [--out DIR]``.

Verbs: train, eval, sweep, dump-features, transplant.  ``--plot`` also
renders PNG figures next to the CSV outputs.  The environment variable
``SPARTA_NUM_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as C
from . import experiment as E
from . import models as M

THREADS_ENV = "SPARTA_NUM_THREADS"


def _load_config(args) -> C.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.config is None:
        raise C.ConfigError("--config is required")
    return C.load(args.config, overrides)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _plot_traces(cfg, out: Path) -> None:
    from . import report
    from .attacks import read_trace_csv

    traces = {a.label(): read_trace_csv(out / f"trace_{a.label()}.csv") for a in cfg.eval_attacks}
    if traces:
        report.plot_traces(traces, out / "traces.png")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    row = E.run(cfg, log=_log)
    if args.plot:
        _plot_traces(cfg, cfg.out_dir)
    sys.stdout.write(row.to_json())
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = M.load_checkpoint(args.checkpoint)
    _, test = E.load_data(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    row = E.evaluate_model(model, test, cfg, cfg.out_dir)
    (cfg.out_dir / "result.json").write_text(row.to_json())
    if args.plot:
        _plot_traces(cfg, cfg.out_dir)
    sys.stdout.write(row.to_json())
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = cfg.out_dir
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not ckpt.exists():
        if args.checkpoint:
            raise FileNotFoundError(f"checkpoint {ckpt} not found")
        _log(f"no checkpoint at {ckpt}; training first")
        E.run(cfg, log=_log)
    model = M.load_checkpoint(ckpt)
    _, test = E.load_data(cfg)
    grid = C.parse_floats(args.epsilons) if args.epsilons else None
    rows, mean = E.sweep_epsilon(model, test, cfg, grid)
    out.mkdir(parents=True, exist_ok=True)
    E.write_sweep_csv(out / "sweep.csv", rows)
    (out / "sweep_summary.json").write_text(json.dumps({"model": model.strategy_tag(), "mean_error": mean}, indent=2,
                                                       sort_keys=True) + "\n")
    if args.plot:
        from . import report
        report.plot_sweep(rows, out / "sweep.png", model.strategy_tag())
    for e, err in rows:
        print(f"{e:g},{err!r}")
    print(f"mean_error={mean!r}")
    return 0


def cmd_dump(args) -> int:
    cfg = _load_config(args)
    model = M.load_checkpoint(args.checkpoint)
    layer = args.layer or cfg.dump_layer
    if not layer:
        raise C.ConfigError("dump.layer: no layer given (use --layer or dump.layer)")
    _, test = E.load_data(cfg)
    files = E.dump_features(model, test.images[: cfg.dump_images], layer, cfg.out_dir / "features")
    print(f"wrote {len(files)} files to {cfg.out_dir / 'features'}")
    return 0


def cmd_transplant(args) -> int:
    donor = M.load_checkpoint(args.donor)
    if args.recipient:
        recipient = M.load_checkpoint(args.recipient)
        out = Path(args.out or ".")
    else:
        cfg = _load_config(args)
        train, _ = E.load_data(cfg)
        bb = cfg.backbone(train.image_shape, train.class_count)
        from . import seeding
        recipient = M.build_model(bb, cfg.strategy(bb), seeding.subseed(cfg.seed, "init"))
        out = cfg.out_dir
    pairs = None
    if args.slots:
        pairs = [(next(iter(M.parse_slots(a, donor.cfg))), next(iter(M.parse_slots(b, recipient.cfg))))
                 for a, b in C.parse_slot_map(args.slots)]
    model = M.transplant_activations(donor, recipient, pairs)
    out.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(model, out / "checkpoint.bin")
    print(f"transplanted {len(pairs or donor.sparta_slots())} slot(s) into {out / 'checkpoint.bin'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparta", description="SPARTA activation experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the top-level seed")
        sp.add_argument("--out", help="override the output directory")
        return sp

    sp = common(sub.add_parser("train", help="train and evaluate per config"))
    sp.add_argument("--plot", action="store_true", help="also render loss-trace PNGs")
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(fn=cmd_eval)

    sp = common(sub.add_parser("sweep", help="error versus epsilon"))
    sp.add_argument("--checkpoint", help="default: <out>/checkpoint.bin, training first if absent")
    sp.add_argument("--epsilons", help="comma-separated ascending grid (default: sweep.epsilons)")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(fn=cmd_sweep)

    sp = common(sub.add_parser("dump-features", help="PGM maps before/after a slot's activation"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--layer", help="slot such as G3.B1 (default: dump.layer)")
    sp.set_defaults(fn=cmd_dump)

    sp = common(sub.add_parser("transplant", help="graft a donor's SPARTA nets into a recipient"), False)
    sp.add_argument("--donor", required=True, help="donor checkpoint")
    sp.add_argument("--recipient", help="recipient checkpoint (default: fresh model from --config)")
    sp.add_argument("--slots", help="DONOR->RECIPIENT pairs, e.g. G1.B1->G1.B1 (default: same names)")
    sp.set_defaults(fn=cmd_transplant)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get(THREADS_ENV)
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                return args.fn(args)
        return args.fn(args)
    except (ValueError, KeyError, OSError, EOFError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"sparta {args.verb}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
