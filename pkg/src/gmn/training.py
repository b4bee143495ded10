"""Losses, the optimizer, gradient verification, and the training loop.

Gradients come from the package's own reverse-mode engine; the finite
difference checker here is the independent oracle that keeps it honest.
Tokens are sampled once before training and frozen, so gradients flow
only through weights and two runs with the same config are bitwise
identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .config import TrainConfig
from .errors import NumericalError, ValidationError
from .model import GMNModel, PreparedGraph, build_model, head_logits, node_encodings, prepare_graph
from .posenc import apply_pe
from .graphs import Graph
from .tokenizer import derive_rng

_TAG_EPOCH = 3
_TAG_SPLIT = 5
_TAG_FDCHECK = 6

# Relative-error floor: central differences at h = 1e-5 carry ~1e-10 of
# roundoff, so comparisons below this magnitude are meaningless.
_REL_FLOOR = 1e-4


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log likelihood of integer labels under row softmax."""
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1,) + logits.shape)
        labels = np.atleast_1d(labels)
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.asarray(labels, dtype=np.intp)] = 1.0
    picked = ad.sum_(ad.mul(ad.log_softmax(logits), Tensor(onehot)), axis=-1)
    return -ad.mean(picked)


def mae_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    return ad.mean(ad.absolute(ad.sub(pred, Tensor(np.asarray(target, dtype=np.float64)))))


def loss_for_graph(model: GMNModel, prep: PreparedGraph) -> Tensor:
    task = model.config.task
    g = prep.graph
    logits = head_logits(node_encodings(model, prep), task, model.head)
    if task == "node_class":
        if g.labels is None:
            raise ValidationError("node_class task needs per-node labels")
        return cross_entropy(logits, np.asarray(g.labels, dtype=np.intp))
    if task == "graph_class":
        if g.graph_label is None:
            raise ValidationError("graph_class task needs a graph label")
        return cross_entropy(logits, np.array([int(g.graph_label)]))
    if g.graph_label is None:
        raise ValidationError("graph_reg task needs a graph target")
    return mae_loss(logits, np.array([float(g.graph_label)]))


def _metric_for_graph(model: GMNModel, prep: PreparedGraph) -> tuple[float, int]:
    """(metric numerator, count): correct predictions or absolute error."""
    task = model.config.task
    g = prep.graph
    with ad.no_grad():
        logits = head_logits(node_encodings(model, prep), task, model.head)
    if task == "node_class":
        pred = np.argmax(logits.data, axis=-1)
        return float(np.sum(pred == np.asarray(g.labels))), g.num_nodes
    if task == "graph_class":
        return float(int(np.argmax(logits.data)) == int(g.graph_label)), 1
    return float(np.abs(logits.data[0] - float(g.graph_label))), 1


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParameterStore, grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected first/second-moment update, in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1 ** t)
        v_hat = state.v[name] / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    failures: list[tuple[str, int, float, float]]  # (name, flat idx, ad, fd)
    checked: int

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"checked {self.checked} coordinate(s); "
                 f"max rel err {self.max_rel_err:.3e}"]
        for name, idx, g_ad, g_fd in self.failures[:20]:
            lines.append(f"  FAIL {name}[{idx}]: autodiff {g_ad:.9e} vs "
                         f"finite diff {g_fd:.9e}")
        if len(self.failures) > 20:
            lines.append(f"  ... and {len(self.failures) - 20} more failures")
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), _REL_FLOOR)


def gradient_check(loss_fn, params: ParameterStore, h: float = 1e-5,
                   rtol: float = 1e-4, names: list[str] | None = None,
                   max_coords: int | None = None,
                   seed: int = 0) -> GradCheckReport:
    """Central differences (f(x+h) - f(x-h)) / 2h against reverse mode.

    ``loss_fn`` must be a deterministic scalar function of the stored
    parameters.  When ``max_coords`` is given, a seeded subset of
    coordinates is checked instead of all of them.
    """
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = params.gradients()
    check_names = params.names() if names is None else names
    coords: list[tuple[str, int]] = []
    for name in check_names:
        coords.extend((name, i) for i in range(params[name].data.size))
    if max_coords is not None and len(coords) > max_coords:
        rng = derive_rng(_TAG_FDCHECK, seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]
    per_param: dict[str, float] = {name: 0.0 for name in check_names}
    failures: list[tuple[str, int, float, float]] = []
    for name, idx in coords:
        flat = params[name].data.ravel()
        orig = flat[idx]
        with ad.no_grad():
            flat[idx] = orig + h
            f_plus = loss_fn().item()
            flat[idx] = orig - h
            f_minus = loss_fn().item()
        flat[idx] = orig
        g_fd = (f_plus - f_minus) / (2.0 * h)
        g_ad = float(grads[name].ravel()[idx])
        err = _rel_err(g_ad, g_fd)
        per_param[name] = max(per_param[name], err)
        if err > rtol:
            failures.append((name, idx, g_ad, g_fd))
    return GradCheckReport(per_param=per_param, failures=failures,
                           checked=len(coords))


def finite_diff_check(model: GMNModel, g: Graph, h: float = 1e-5,
                      rtol: float = 1e-4, names: list[str] | None = None,
                      max_coords: int | None = None) -> GradCheckReport:
    """Verify every model gradient on one graph with frozen tokens."""
    graph = apply_pe(g, model.config.pe.mode, model.config.pe.k)
    prep = prepare_graph(model, graph)
    return gradient_check(lambda: loss_for_graph(model, prep), model.params,
                          h=h, rtol=rtol, names=names, max_coords=max_coords,
                          seed=model.config.seed)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    metric: float


@dataclass
class TrainResult:
    model: GMNModel
    history: list[EpochRecord]
    train_indices: list[int]
    val_indices: list[int]

    def history_csv(self) -> str:
        lines = ["epoch,split,loss,metric"]
        for rec in self.history:
            lines.append(f"{rec.epoch},{rec.split},{rec.loss!r},{rec.metric!r}")
        return "\n".join(lines) + "\n"

    def write_history(self, path: str | Path) -> None:
        Path(path).write_text(self.history_csv())


def _evaluate(model: GMNModel, preps: list[PreparedGraph]) -> tuple[float, float]:
    """(mean loss, task metric) over a list of prepared graphs."""
    total_loss = 0.0
    num = 0.0
    den = 0.0
    with ad.no_grad():
        for prep in preps:
            total_loss += loss_for_graph(model, prep).item()
            a, b = _metric_for_graph(model, prep)
            num += a
            den += b
    if model.config.task == "graph_reg":
        metric = num / max(den, 1.0)  # mean absolute error
    else:
        metric = num / max(den, 1.0)  # accuracy
    return total_loss / max(len(preps), 1), metric


def infer_out_dim(graphs: list[Graph], task: str) -> int:
    if task == "node_class":
        labels = [g.labels for g in graphs]
        if any(l is None for l in labels):
            raise ValidationError("node_class task: every graph needs labels")
        return int(max(int(np.max(l)) for l in labels)) + 1
    if task == "graph_class":
        if any(g.graph_label is None for g in graphs):
            raise ValidationError("graph_class task: every graph needs graph_label")
        return int(max(int(g.graph_label) for g in graphs)) + 1
    if any(g.graph_label is None for g in graphs):
        raise ValidationError("graph_reg task: every graph needs graph_label")
    return 1


def prepare_dataset(cfg: TrainConfig, graphs: list[Graph],
                    model: GMNModel | None = None
                    ) -> tuple[GMNModel, list[PreparedGraph]]:
    """Apply PE, tokenize once, and build (or reuse) the model."""
    if not graphs:
        raise ValidationError("dataset is empty")
    augmented = [apply_pe(g, cfg.pe.mode, cfg.pe.k) for g in graphs]
    dims = {g.feature_dim for g in augmented}
    if len(dims) != 1:
        raise ValidationError(f"inconsistent feature widths in dataset: {dims}")
    d_in = dims.pop()
    d_edge = 0
    if augmented[0].edge_features is not None:
        d_edge = augmented[0].edge_features.shape[1]
    if model is None:
        out_dim = infer_out_dim(graphs, cfg.task)
        model = build_model(cfg, d_in, out_dim, d_edge=d_edge)
    elif model.d_in != d_in:
        raise ValidationError(
            f"model expects feature width {model.d_in}, dataset has {d_in}")
    preps = [prepare_graph(model, g) for g in augmented]
    return model, preps


def split_dataset(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded train/validation split over graph indices."""
    idx = derive_rng(_TAG_SPLIT, seed).permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        n_val = max(n - 1, 0)
    val = sorted(int(i) for i in idx[:n_val])
    train = sorted(int(i) for i in idx[n_val:])
    return train, val


def train(dataset: list[Graph], cfg: TrainConfig,
          log_every: int | None = None) -> TrainResult:
    """Train on a list of graphs; deterministic given cfg.seed.

    Tokens are sampled once and frozen; batches are reshuffled each epoch
    from a seeded stream.  Cross-entropy for classification, mean
    absolute error for regression.  Diverging (NaN) losses abort with
    the epoch and batch index.
    """
    model, preps = prepare_dataset(cfg, dataset)
    train_idx, val_idx = split_dataset(len(preps), cfg.val_fraction, cfg.seed)
    train_preps = [preps[i] for i in train_idx]
    val_preps = [preps[i] for i in val_idx]
    state = AdamState()
    history: list[EpochRecord] = []
    started = time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(_TAG_EPOCH, cfg.seed, epoch).permutation(len(train_preps))
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_preps[i] for i in order[start:start + cfg.batch_size]]
            model.params.zero_grad()
            loss = loss_for_graph(model, batch[0])
            for prep in batch[1:]:
                loss = ad.add(loss, loss_for_graph(model, prep))
            loss = ad.div(loss, float(len(batch)))
            if not np.isfinite(loss.item()):
                raise NumericalError(
                    f"loss diverged at epoch {epoch}, batch {batch_no}")
            loss.backward()
            adam_step(model.params, model.params.gradients(), state,
                      cfg.lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps)
        tr_loss, tr_metric = _evaluate(model, train_preps)
        history.append(EpochRecord(epoch, "train", tr_loss, tr_metric))
        if val_preps:
            va_loss, va_metric = _evaluate(model, val_preps)
            history.append(EpochRecord(epoch, "val", va_loss, va_metric))
        if log_every and epoch % log_every == 0:
            elapsed = time.monotonic() - started
            print(f"epoch {epoch:>4}/{cfg.epochs} loss {tr_loss:.4f} "
                  f"metric {tr_metric:.4f} ({elapsed:.1f}s)")
    return TrainResult(model=model, history=history,
                       train_indices=train_idx, val_indices=val_idx)


def evaluate_dataset(model: GMNModel, graphs: list[Graph]) -> tuple[float, float]:
    """(loss, metric) of a trained model on a fresh dataset."""
    _, preps = prepare_dataset(model.config, graphs, model=model)
    return _evaluate(model, preps)
