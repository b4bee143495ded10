"""Command-line entry point.

    gmn tokenize   --config cfg.json --data graph.json --out tokens.json
    gmn train      --config cfg.json --data dataset.json --out run_dir/
    gmn eval       --checkpoint ckpt.json --data dataset.json [--out csv]
    gmn bench      --config cfg.json --out run_dir/ [--sizes 1024,...]
    gmn wl-check   [--fixture name] [--out report.txt]
    gmn grad-check --config cfg.json

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 IO
error.  GMN_THREADS caps the BLAS thread pools (set before numpy spins
them up); all commands are otherwise single-process and deterministic
given the config seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("GMN_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


_apply_thread_cap()

from .bench import doubling_ratios, run_scaling, write_bench_csv  # noqa: E402
from .config import TrainConfig  # noqa: E402
from .errors import GmnError, GraphIOError, NumericalError, ValidationError  # noqa: E402
from .expressiveness import ALL_FIXTURES, run_fixture  # noqa: E402
from .graphs import load_dataset, load_graph, make_graph  # noqa: E402
from .model import load_checkpoint, save_checkpoint  # noqa: E402
from .tokenizer import load_token_cache, save_token_cache, tokenize_graph  # noqa: E402
from .training import evaluate_dataset, finite_diff_check, prepare_dataset, train  # noqa: E402

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    for note in cfg.grid_warnings():
        print(f"note: {note}", file=sys.stderr)
    return cfg


def cmd_tokenize(args) -> int:
    cfg = _load_config(args)
    if cfg.m < 1:
        raise ValidationError("tokenize requires m >= 1 (m = 0 has no token cache)")
    g = load_graph(args.data)
    specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed)
    save_token_cache(args.out, g, specs, cfg.M, cfg.m, cfg.s, cfg.seed)
    print(f"wrote {len(specs)} token sequences "
          f"({len(specs[0].ordered_tokens)} tokens each) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    graphs = load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.tokens:
        if len(graphs) != 1:
            raise ValidationError("--tokens applies to single-graph datasets only")
        # Verify the cache matches before training touches it.
        load_token_cache(args.tokens, graphs[0], cfg.M, cfg.m, cfg.s, cfg.seed)
    result = train(graphs, cfg, log_every=args.log_every)
    ckpt = out_dir / "checkpoint.json"
    csv = out_dir / "metrics.csv"
    save_checkpoint(result.model, ckpt)
    result.write_history(csv)
    print(f"wrote {ckpt} and {csv}")
    if not args.no_figures and result.history:
        from .figures import render_training_figure

        fig = out_dir / "metrics.png"
        render_training_figure(result.history, fig)
        print(f"wrote {fig}")
    if result.history:
        final = [r for r in result.history if r.split == "train"][-1]
        print(f"final train loss {final.loss:.6f} metric {final.metric:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    graphs = load_dataset(args.data)
    loss, metric = evaluate_dataset(model, graphs)
    print(f"loss {loss!r} metric {metric!r}")
    if args.out:
        Path(args.out).write_text(f"loss,metric\n{loss!r},{metric!r}\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_scaling(cfg, sizes, reps=args.reps,
                       log=lambda s: print(s, file=sys.stderr))
    csv = out_dir / "bench.csv"
    write_bench_csv(rows, csv)
    print(f"wrote {csv}")
    if not args.no_figures:
        from .figures import render_bench_figure

        fig = out_dir / "bench.png"
        render_bench_figure(rows, fig)
        print(f"wrote {fig}")
    for n_small, n_large, ratio in doubling_ratios(rows):
        print(f"median time ratio {n_small} -> {n_large}: {ratio:.2f}")
    return EXIT_OK


def cmd_wl_check(args) -> int:
    names = ALL_FIXTURES if args.fixture == "all" else (args.fixture,)
    outcomes = [run_fixture(name, seed=args.seed or 0) for name in names]
    text = "\n".join(o.report() for o in outcomes)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_NUMERICAL


def cmd_grad_check(args) -> int:
    cfg = _load_config(args)
    g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 4)],
                   labels=[0, 1, 0, 1, 0], graph_label=1.0)
    model, _ = prepare_dataset(cfg, [g])
    report = finite_diff_check(model, g, h=args.h, max_coords=args.max_coords)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmn",
        description="Graph sequence learning with a bidirectional "
                    "selective state-space encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="sample and cache token sequences")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="graph JSON file")
    p.add_argument("--out", required=True, help="token cache path")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--tokens", help="token cache to verify against")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="linear-scaling benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sizes", default="1024,2048,4096,8192")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("wl-check", help="expressiveness fixtures")
    p.add_argument("--fixture", default="all",
                   choices=("all",) + ALL_FIXTURES)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_wl_check)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--max-coords", type=int)
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GraphIOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GmnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
