"""Selective state-space kernel: discretization, recurrent scan, and the
time-invariant convolution form.

The continuous system h' = A h + B x, y = C h is discretized per step by
a zero-order hold: A_bar = exp(delta * a) and B_bar = ((exp(delta * a) -
1)/a) * B for each diagonal entry a, with a series branch where |delta *
a| < 1e-6.  Selection makes B, C and delta functions of the input
sequence; with them held constant the scan collapses to a causal
convolution against the kernel (C B_bar, C A_bar B_bar, ...), which the
test suite uses as an independent oracle.

State entries are kept strictly negative by storing log magnitudes:
a = -exp(a_log).  That keeps 0 < A_bar < 1 for every positive step size,
no matter what the optimizer does to a_log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ValidationError


@dataclass
class SSMParams:
    """Diagonal evolution entries (log magnitudes) and the step-size bias."""

    a_log: Tensor      # (d_model, d_state); a = -exp(a_log) < 0
    delta_bias: Tensor  # (d_model,)

    @property
    def d_model(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    @property
    def a(self) -> Tensor:
        return -ad.exp(self.a_log)


def init_a_log(d_model: int, d_state: int) -> np.ndarray:
    """Initial diagonal magnitudes 1..N repeated across channels."""
    return np.tile(np.log(np.arange(1, d_state + 1, dtype=np.float64)),
                   (d_model, 1))


def init_delta_bias(d_model: int, rng: np.random.Generator,
                    low: float = 1e-3, high: float = 1e-1) -> np.ndarray:
    """Bias such that softplus(bias) is log-uniform in [low, high]."""
    dt = np.exp(rng.uniform(np.log(low), np.log(high), size=d_model))
    return np.log(np.expm1(dt))


@dataclass
class SelectiveInputs:
    """Input-dependent projections: B, C (.., L, N) and Delta (.., L, D) > 0."""

    B: Tensor
    C: Tensor
    Delta: Tensor


@dataclass
class SSMDiscretization:
    """Per-step decay and input tensors (..., L, d_model, d_state)."""

    a_bar: Tensor
    b_bar: Tensor

    def __post_init__(self):
        self.a_bar = as_tensor(self.a_bar)
        self.b_bar = as_tensor(self.b_bar)
        if self.a_bar.shape != self.b_bar.shape:
            raise ValidationError("A_bar and B_bar shapes differ")


def discretize(params: SSMParams, delta, B) -> SSMDiscretization:
    """Zero-order-hold conversion of (a, B, delta) into per-step tensors.

    delta: (..., L, d_model) positive; B: (..., L, d_state).
    """
    delta = as_tensor(delta)
    B = as_tensor(B)
    if np.any(delta.data <= 0):
        raise ValidationError("delta must be positive elementwise")
    pair = ad.zoh_discretize(delta, params.a, B)
    return SSMDiscretization(a_bar=pair[0], b_bar=pair[1])


def _batched(t: Tensor, target_ndim: int) -> tuple[Tensor, bool]:
    if t.ndim == target_ndim:
        return t, False
    if t.ndim == target_ndim - 1:
        return ad.reshape(t, (1,) + t.shape), True
    raise ValidationError(f"expected {target_ndim - 1} or {target_ndim} dims, "
                          f"got shape {t.shape}")


def scan_recurrent(disc: SSMDiscretization, C, x) -> Tensor:
    """Left-to-right recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = <C_t, h_t>.

    Accepts (L, ...) or batched (B, L, ...) inputs; h_0 = 0.  Time
    O(L * d_model * d_state), working state O(d_model * d_state).
    """
    C = as_tensor(C)
    x = as_tensor(x)
    a4, squeezed = _batched(disc.a_bar, 4)
    b4, _ = _batched(disc.b_bar, 4)
    c3, _ = _batched(C, 3)
    x3, _ = _batched(x, 3)
    Bb, L, D, N = a4.shape
    if c3.shape != (Bb, L, N) or x3.shape != (Bb, L, D):
        raise ValidationError(
            f"scan shapes disagree: A_bar {a4.shape}, C {c3.shape}, x {x3.shape}")
    y = ad.selective_scan(a4, b4, c3, x3)
    return ad.reshape(y, (L, D)) if squeezed else y


def kernel_conv(disc: SSMDiscretization, C, x) -> np.ndarray:
    """Time-invariant convolution form of the scan.

    Requires A_bar, B_bar constant over the sequence axis; materializes
    the kernel (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar) and
    returns the causal convolution with x.  Forward-only diagnostic.
    """
    a_bar = disc.a_bar.data
    b_bar = disc.b_bar.data
    c = np.asarray(C.data if isinstance(C, Tensor) else C, dtype=np.float64)
    xv = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if a_bar.ndim != 3:
        raise ValidationError("kernel_conv expects an unbatched (L, D, N) slice")
    L, D, N = a_bar.shape
    if (np.max(np.abs(a_bar - a_bar[0])) > 1e-12
            or np.max(np.abs(b_bar - b_bar[0])) > 1e-12):
        raise ValidationError("kernel_conv requires time-invariant A_bar/B_bar")
    if c.ndim != 1 or c.shape[0] != N:
        raise ValidationError("kernel_conv requires a fixed C of shape (d_state,)")
    if xv.shape != (L, D):
        raise ValidationError(f"x must be (L, D), got {xv.shape}")
    # kernel[t, d] = sum_n c[n] * a_bar[d, n]^t * b_bar[d, n]
    powers = np.cumprod(np.concatenate(
        [np.ones((1, D, N)), np.broadcast_to(a_bar[0], (L - 1, D, N))], axis=0), axis=0)
    kernel = np.einsum("tdn,dn,n->td", powers, b_bar[0], c)
    y = np.zeros((L, D))
    for tau in range(L):
        y[tau:] += kernel[: L - tau] * xv[tau]
    return y


def selective_projection(x, w_b: Tensor, w_c: Tensor, w_delta: Tensor,
                         params: SSMParams) -> SelectiveInputs:
    """Linear per-step projections of the input sequence.

    B_t = x_t W_B, C_t = x_t W_C, Delta_t = softplus(x_t W_delta + bias),
    so Delta is positive everywhere.
    """
    x = as_tensor(x)
    if x.shape[-1] != w_b.shape[0]:
        raise ValidationError(
            f"input dim {x.shape[-1]} does not match projection dim {w_b.shape[0]}")
    B = ad.matmul(x, w_b)
    C = ad.matmul(x, w_c)
    Delta = ad.softplus(ad.add(ad.matmul(x, w_delta), params.delta_bias))
    return SelectiveInputs(B=B, C=C, Delta=Delta)
