"""Scaling benchmark: tokenize + forward cost on random regular graphs.

Tokenization touches each node a constant number of times (M * s walks of
length <= m) and the forward pass is a fixed number of linear scans, so
total time should scale linearly in graph size; the doubling ratio over a
size sweep is the check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .datasets import random_regular_graph
from .model import build_model, node_encodings, prepare_graph
from .posenc import apply_pe
from .tokenizer import tokenize_graph

WARMUP_THRESHOLD = 256


@dataclass
class BenchRow:
    n: int
    rep: int
    tokenize_seconds: float
    forward_seconds: float
    warmup: bool

    @property
    def total_seconds(self) -> float:
        return self.tokenize_seconds + self.forward_seconds


def run_scaling(cfg: TrainConfig, sizes: list[int], reps: int = 3,
                degree: int = 4, log=None) -> list[BenchRow]:
    """Time tokenization and one forward pass at each graph size."""
    rows: list[BenchRow] = []
    model = build_model(cfg, 1 + cfg.pe.dim, 2)
    for n in sizes:
        for rep in range(reps):
            g = random_regular_graph(n, degree, seed=cfg.seed + rep)
            g = apply_pe(g, cfg.pe.mode, cfg.pe.k)
            t0 = time.perf_counter()
            specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed) if cfg.m >= 1 else None
            t1 = time.perf_counter()
            with ad.no_grad():
                prep = prepare_graph(model, g, specs)
                node_encodings(model, prep)
            t2 = time.perf_counter()
            row = BenchRow(n=n, rep=rep, tokenize_seconds=t1 - t0,
                           forward_seconds=t2 - t1, warmup=n < WARMUP_THRESHOLD)
            rows.append(row)
            if log:
                log(f"n={n} rep={rep} tokenize={row.tokenize_seconds:.3f}s "
                    f"forward={row.forward_seconds:.3f}s")
    return rows


def median_totals(rows: list[BenchRow]) -> dict[int, float]:
    """Median total seconds per size, warmup rows excluded."""
    by_n: dict[int, list[float]] = {}
    for row in rows:
        if not row.warmup:
            by_n.setdefault(row.n, []).append(row.total_seconds)
    return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def doubling_ratios(rows: list[BenchRow]) -> list[tuple[int, int, float]]:
    """(n_small, n_large, time ratio) for consecutive sizes in the sweep."""
    med = median_totals(rows)
    sizes = sorted(med)
    return [(a, b, med[b] / med[a]) for a, b in zip(sizes, sizes[1:])]


def bench_csv(rows: list[BenchRow]) -> str:
    lines = ["n,rep,tokenize_seconds,forward_seconds,total_seconds,warmup"]
    for r in rows:
        lines.append(f"{r.n},{r.rep},{r.tokenize_seconds!r},"
                     f"{r.forward_seconds!r},{r.total_seconds!r},{int(r.warmup)}")
    return "\n".join(lines) + "\n"


def write_bench_csv(rows: list[BenchRow], path: str | Path) -> None:
    Path(path).write_text(bench_csv(rows))
