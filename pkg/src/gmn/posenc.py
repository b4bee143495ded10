"""Positional/structural encodings concatenated onto node features.

Two encodings are provided: random-walk return probabilities (RWSE) and
low-frequency eigenvectors of the combinatorial Laplacian (LapPE).  Both
are computed once per graph, outside the trainable model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericalError, ValidationError
from .graphs import Graph

DENSE_EIG_CAP = 5000


class PEMode(str, Enum):
    NONE = "none"
    RWSE = "rwse"
    LAPPE = "lappe"


@dataclass(frozen=True)
class PosEncoding:
    vectors: np.ndarray  # (n, d_pe)
    mode: PEMode
    d_pe: int


def none_encoding(g: Graph) -> PosEncoding:
    return PosEncoding(np.zeros((g.num_nodes, 0)), PEMode.NONE, 0)


def rwse(g: Graph, K: int) -> PosEncoding:
    """Return probabilities [P^1_vv, ..., P^K_vv] of the walk matrix D^-1 A.

    Computed by K rounds of row propagation over the edge list (never a
    dense matrix power).  Isolated nodes get all-zero rows.
    """
    if K < 1:
        raise ValidationError("rwse requires K >= 1")
    n = g.num_nodes
    deg = g.degrees().astype(np.float64)
    src = np.array([u for u, v in g.edges] + [v for u, v in g.edges], dtype=np.intp)
    dst = np.array([v for u, v in g.edges] + [u for u, v in g.edges], dtype=np.intp)
    inv_deg = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    out = np.zeros((n, K))
    for v in range(n):
        row = np.zeros(n)
        row[v] = 1.0
        for k in range(K):
            scaled = row * inv_deg
            row = np.zeros(n)
            if len(src):
                np.add.at(row, dst, scaled[src])
            out[v, k] = row[v]
    return PosEncoding(out, PEMode.RWSE, K)


def jacobi_eigh(mat: np.ndarray, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi diagonalization of a dense symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns).  Sweeps
    rotate away every off-diagonal pair until the largest off-diagonal
    magnitude falls below ``tol`` times the matrix scale.
    """
    a = np.array(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("jacobi_eigh expects a square matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValidationError("jacobi_eigh expects a symmetric matrix")
    n = a.shape[0]
    vecs = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), vecs
    scale = max(float(np.max(np.abs(a))), 1.0)
    for _ in range(max_sweeps):
        off = np.max(np.abs(a - np.diag(a.diagonal())))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale * 1e-2:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * vecs[:, p] - s * vecs[:, q]
                rot_q = s * vecs[:, p] + c * vecs[:, q]
                vecs[:, p], vecs[:, q] = rot_p, rot_q
    else:
        raise NumericalError("Jacobi eigensolver did not converge",
                             residual=float(np.max(np.abs(a - np.diag(a.diagonal())))))
    vals = a.diagonal().copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian L = D - A as a dense symmetric matrix."""
    n = g.num_nodes
    lap = np.zeros((n, n))
    for u, v in g.edges:
        lap[u, v] -= 1.0
        lap[v, u] -= 1.0
        lap[u, u] += 1.0
        lap[v, v] += 1.0
    return lap


def lappe(g: Graph, d_pe: int) -> PosEncoding:
    """Eigenvectors of L = D - A for the d_pe smallest nonzero eigenvalues.

    Each eigenvector's sign is fixed by making its largest-magnitude entry
    positive; ties across equal eigenvalues are broken by lexicographic
    vector order.  Dense solve only: graphs beyond DENSE_EIG_CAP nodes are
    rejected with a pointer at rwse.
    """
    n = g.num_nodes
    if n > DENSE_EIG_CAP:
        raise ValidationError(
            f"lappe uses a dense eigensolver capped at {DENSE_EIG_CAP} nodes "
            f"(got {n}); use rwse for larger graphs")
    if d_pe >= n:
        raise ValidationError(f"lappe requires d_pe < num_nodes (got {d_pe} >= {n})")
    vals, vecs = jacobi_eigh(laplacian(g))
    nonzero = vals > 1e-8
    if int(nonzero.sum()) < d_pe:
        raise ValidationError(
            f"graph has only {int(nonzero.sum())} nonzero Laplacian eigenvalues; "
            f"d_pe={d_pe} requested")
    vals, vecs = vals[nonzero], vecs[:, nonzero]
    cols = []
    for j in range(vecs.shape[1]):
        q = vecs[:, j]
        top = int(np.argmax(np.abs(q)))
        if q[top] < 0:
            q = -q
        cols.append((vals[j], tuple(q.tolist()), q))
    cols.sort(key=lambda item: (item[0], item[1]))
    out = np.stack([q for _, _, q in cols[:d_pe]], axis=1)
    return PosEncoding(out, PEMode.LAPPE, d_pe)


def concat_pe(g: Graph, pe: PosEncoding) -> Graph:
    """New graph whose features are the column concatenation [X | P]."""
    if pe.mode is PEMode.NONE:
        return g
    if pe.vectors.shape[0] != g.num_nodes:
        raise ValidationError(
            f"positional encoding has {pe.vectors.shape[0]} rows for a "
            f"{g.num_nodes}-node graph")
    feats = np.concatenate([g.node_features, pe.vectors], axis=1)
    return Graph(num_nodes=g.num_nodes, edges=g.edges, node_features=feats,
                 edge_features=g.edge_features, labels=g.labels,
                 graph_label=g.graph_label)


def compute_pe(g: Graph, mode: PEMode | str, k: int = 8) -> PosEncoding:
    mode = PEMode(mode)
    if mode is PEMode.NONE:
        return none_encoding(g)
    if mode is PEMode.RWSE:
        return rwse(g, k)
    return lappe(g, k)


def apply_pe(g: Graph, mode: PEMode | str, k: int = 8) -> Graph:
    return concat_pe(g, compute_pe(g, mode, k))
