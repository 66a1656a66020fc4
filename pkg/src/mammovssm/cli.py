"""Command-line entry point: synth, train, eval, gradcheck, bench."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .data import SyntheticSpec, export, generate_synthetic, ingest
from .data.study import BIRADS_SETS
from .heads import BiradsIndex
from .train.bench import MODES, bench, doubling_ratios
from .train.config import load_config
from .train.gradcheck import FUSION_HEAD, gradcheck, tiny_hybrid_config
from .train.trainer import evaluate, load_model, train, write_csv


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", type=Path, help="dataset directory with manifest.csv")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--task", choices=["label", "birads", "multi"])
    p.add_argument("--backbone", choices=["cnn", "vssm", "hybrid"])
    p.add_argument("--binding", choices=["shared", "view-specific"])
    p.add_argument("--birads-set", dest="birads_set", choices=list(BIRADS_SETS))


def _config(args, **extra):
    keys = ("seed", "task", "backbone", "binding", "birads_set")
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides.update(extra)
    return load_config(args.config, **overrides)


def _dataset(cfg, data_dir):
    if data_dir is not None:
        return ingest(data_dir, image_size=cfg.image_size, birads_classes=cfg.birads_classes)
    spec = SyntheticSpec(image_size=cfg.image_size, birads_classes=cfg.birads_classes,
                         missing_side_prob=cfg.missing_side_prob, seed=cfg.data_seed)
    return generate_synthetic(spec, cfg.n_studies)


def cmd_synth(args) -> int:
    cfg = _config(args, n_studies=args.n, image_size=args.image_size)
    out = args.out or Path("synthetic")
    studies = _dataset(cfg, None)
    export(studies, out)
    print(f"wrote {len(studies)} studies to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, max_epochs=args.epochs, lr=args.lr, n_studies=args.n, target_auc=args.target_auc)
    out = args.out or Path("run")
    report, _ = train(cfg, _dataset(cfg, args.data), out, log=print)
    print(f"best epoch {report.best_epoch}, monitored {report.best_monitored}, checkpoint {report.checkpoint}, "
          f"{report.seconds:.1f}s")
    return 0


def cmd_eval(args) -> int:
    model, saved = load_model(args.checkpoint)
    train_values = saved.get("train", {})
    cfg = _config(args, **{k: v for k, v in train_values.items() if k in ("image_size", "n_studies", "data_seed")})
    cfg = cfg.replace(birads_set=train_values.get("birads_set", cfg.birads_set))
    studies = _dataset(cfg, args.data)
    result = evaluate(model, studies, BiradsIndex(model.cfg.birads_classes))
    for task, value in result.auc.items():
        print(f"{task}: auc={value} macro_f1={result.f1[task]}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rows = result.rows
        write_csv(args.out / "attention.csv", rows, list(rows[0]) if rows else ["study_id"])
    return 0


def cmd_gradcheck(args) -> int:
    target = FUSION_HEAD if args.model == "fusion-head" else tiny_hybrid_config(args.image_size)
    tol = args.tol if args.tol is not None else (1e-6 if target == FUSION_HEAD else 1e-3)
    report = gradcheck(target, tol, coords=args.coords, seed=args.seed or 0)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    rows = bench(args.lengths, state=args.state, modes=args.modes, repeats=args.repeats)
    out = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["mode", "L", "seconds"])
        for r in rows:
            w.writerow([r["mode"], r["L"], f"{r['seconds']:.6g}"])
    finally:
        if out is not sys.stdout:
            out.close()
    if "recurrent" in args.modes:
        ratios = doubling_ratios(rows)
        print("recurrent doubling ratios: " + ", ".join(f"{x:.2f}" for x in ratios), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mammovssm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset to disk")
    _common(p)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on --data, or on a seeded synthetic set")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n", type=int, help="synthetic study count when --data is absent")
    p.add_argument("--target-auc", dest="target_auc", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _common(p)
    p.add_argument("--model", choices=["fusion-head", "hybrid"], default="hybrid")
    p.add_argument("--tol", type=float)
    p.add_argument("--coords", type=int, default=20)
    p.add_argument("--image-size", dest="image_size", type=int, default=16)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="scan wall time against sequence length (CSV)")
    p.add_argument("--lengths", type=int, nargs="+", default=[1024, 2048, 4096, 8192])
    p.add_argument("--state", type=int, default=16)
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
