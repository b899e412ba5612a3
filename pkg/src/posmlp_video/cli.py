"""Command-line entry point: ``posmlp-video <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from . import selftest as selftest_mod
from .accounting import CONVENTIONS, FLOP_CONVENTIONS, count_model_flops, count_model_params
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, preset
from .export import export_relations
from .tasks import KINDS, SyntheticTask
from .train import TrainConfig, evaluate, train

log = logging.getLogger("posmlp_video")


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        return ModelConfig.from_json(args.config)
    return preset(getattr(args, "preset", None) or "toy")


def _parse_window(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in text.lower().split("x"))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"window {text!r} is not TxHxW")
    return parts


def _task(args, cfg: ModelConfig) -> SyntheticTask:
    t, h, _ = cfg.input_size
    return SyntheticTask(args.task, frames=t, size=h, n_train=args.n_train, n_val=args.n_val, seed=args.seed)


def cmd_summary(args) -> int:
    cfg = _load_config(args)
    params = count_model_params(cfg, args.params)
    flops = count_model_flops(cfg, convention=args.convention)
    by = flops.by_component()
    comp = params.components
    print(f"{cfg.variant}  input {'x'.join(map(str, cfg.input_size))}  block {cfg.block_variant}  "
          f"params ({args.params}) {params.total:,}  GFLOPs ({args.convention}) {flops.gflops:.2f}")
    print(f"{'component':<12}{'params':>14}{'GFLOPs':>10}  shape")
    print(f"{'embedding':<12}{comp['embedding']:>14,}{by.get('embedding', 0) / 1e9:>10.3f}")
    for s, shape in enumerate(flops.shapes, 1):
        if s > 1:
            print(f"{f'down{s - 1}':<12}{comp[f'down{s - 1}']:>14,}{by.get(f'down{s - 1}', 0) / 1e9:>10.3f}")
        n = comp[f"stage{s}.fc"] + comp[f"stage{s}.dictionary"] + comp[f"stage{s}.norm"]
        print(f"{f'stage{s}':<12}{n:>14,}{by.get(f'stage{s}', 0) / 1e9:>10.3f}  {'x'.join(map(str, shape))}")
    print(f"{'head':<12}{comp['head']:>14,}{by.get('head', 0) / 1e9:>10.3f}")
    report = {"config": cfg.to_dict(), "params": params.to_dict(), "flops": flops.to_dict()}
    text = json.dumps(report, indent=2)
    if args.json:
        Path(args.json).write_text(text)
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    tc = TrainConfig(model=cfg, lr=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
                     batch_size=args.batch_size, warmup_epochs=args.warmup_epochs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, hist = train(tc, _task(args, cfg))
    save_checkpoint(model, out / "checkpoint.npz")
    (out / "config.json").write_text(cfg.to_json())
    hist.write_csv(out / "history.csv")
    last = hist.last("val")
    print(f"val top1 {last['top1']:.4f}  loss {last['loss']:.4f}  -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    acc = evaluate(model, _task(args, model.config), args.split)
    print(f"{args.task} {args.split} top1 {acc:.4f}")
    return 0


def cmd_export(args) -> int:
    manifest = export_relations(load_checkpoint(args.checkpoint), args.out)
    n = len(json.loads(manifest.read_text())["matrices"])
    print(f"wrote {n} relation matrices, manifest {manifest}")
    return 0


def cmd_bench(args) -> int:
    results = bench_mod.run_sweep(args.kinds.split(","), args.sweep, args.channels, args.groups,
                                  args.reps, max_bytes=args.max_mb << 20)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            bench_mod.write_csv(results, fh)
    else:
        bench_mod.write_csv(results, sys.stdout)
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest_mod.run() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posmlp-video", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp):
        sp.add_argument("--config", help="model config JSON")
        sp.add_argument("--preset", help="named config (S, B, L, toy, micro) when --config is absent")

    def task_args(sp):
        sp.add_argument("--task", choices=KINDS, default="direction")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--n-train", type=int, default=512)
        sp.add_argument("--n-val", type=int, default=128)

    sp = sub.add_parser("summary", help="parameter and FLOP report")
    model_args(sp)
    sp.add_argument("--convention", choices=FLOP_CONVENTIONS, default="mac")
    sp.add_argument("--params", choices=CONVENTIONS, default="text", help="parameter convention")
    sp.add_argument("--json", help="write the JSON report here instead of stdout")
    sp.set_defaults(func=cmd_summary)

    sp = sub.add_parser("train", help="train on a synthetic task")
    model_args(sp)
    task_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=4)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--weight-decay", type=float, default=0.01)
    sp.add_argument("--warmup-epochs", type=int, default=1)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    task_args(sp)
    sp.add_argument("--split", default="val", choices=("train", "val", "test"))
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-relations", help="write relation matrices as CSV + PGM")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("bench", help="gating-unit micro-benchmark, CSV output")
    sp.add_argument("--kinds", default="potgu,posgu,postgu,sgu",
                    help="comma list; append -lazy to a positional kind for the lookup path")
    sp.add_argument("--sweep", type=_parse_window, nargs="+", default=[(16, 7, 7)], metavar="TxHxW")
    sp.add_argument("--channels", type=int, default=64)
    sp.add_argument("--groups", type=int, default=8)
    sp.add_argument("--reps", type=int, default=30)
    sp.add_argument("--max-mb", type=int, default=1024, help="relation-matrix memory cap")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("selftest", help="run the built-in oracle checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
