"""Work-efficient parallel scan for first-order linear recurrences.

The recurrence h[t] = a * h[t-1] + c[t] (h[-1] = 0) is associative once each
step is written as the pair (a, c[t]) under

    (a1, c1) o (a2, c2) = (a1 * a2, a2 * c1 + c2)

with identity (1, 0). A Blelloch up/down sweep over the time axis then
computes all T outputs in O(T) combine work and O(log T) sequential depth,
instead of the T-step serial loop. The time axis is padded to the next power
of two with identity pairs; padding never leaks into the first T outputs.

The sweeps here run as vectorized numpy slices, so "parallel" means the
combine *structure* is the parallel one and the depth/work counters report
what a parallel machine would do. That structure is exactly what the
equivalence suites compare against the serial loop.

``linrec_scan`` is the taped entry point. Its backward pass is the closed
form d(loss)/dx[i] = scale * sum_{t>=i} decay^(t-i) g[t], which is the same
recurrence run over the reversed gradient, so the backward cost is one more
scan rather than a recorded graph.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .tensor import taped_op

_FAULT = {"enabled": False, "bias": 0.0}


@contextmanager
def inject_combine_fault(bias=1e-3):
    """Corrupt every combine's payload by ``bias``. Test hook only.

    Exists so the verification suites can demonstrate they actually catch a
    broken scan rather than vacuously passing.
    """
    prev = dict(_FAULT)
    _FAULT.update(enabled=True, bias=bias)
    try:
        yield
    finally:
        _FAULT.update(prev)


@dataclass
class ScanStats:
    """Combine-op accounting for one scan call.

    ``work`` counts pair combines summed over all sweep levels (the final
    exclusive-to-inclusive combine included), ``depth`` counts sequential
    levels. For padded length P these are at most 3P and 2*log2(P) + 1.
    """

    length: int
    padded_length: int
    work: int
    depth: int


def _combine_into(a_acc, c_acc, a_new, c_new):
    """(a_acc, c_acc) o (a_new, c_new), written into the acc arrays."""
    if c_acc.ndim > 1:
        c_acc *= a_new.reshape(a_new.shape + (1,) * (c_acc.ndim - 1))
    else:
        c_acc *= a_new
    c_acc += c_new
    if _FAULT["enabled"]:
        c_acc += _FAULT["bias"]
    a_acc *= a_new


def pair_scan(a, c):
    """Inclusive scan of pairs (a[t], c[t]) along axis 0.

    a: (T,) per-step decay coefficients; c: (T, ...) payloads. Returns
    (h, stats) where h[t] solves h[t] = a[t] * h[t-1] + c[t].
    """
    a = np.asarray(a)
    c = np.asarray(c)
    T = c.shape[0]
    if T == 0:
        raise ContractError("pair_scan needs a non-empty time axis")
    if a.shape != (T,):
        raise ContractError(f"pair_scan: coefficient shape {a.shape} does not "
                            f"match time axis length {T}")

    P = 1 << max(0, (T - 1).bit_length())
    levels = P.bit_length() - 1  # log2(P)

    A = np.ones(P, dtype=c.dtype)
    C = np.zeros((P,) + c.shape[1:], dtype=c.dtype)
    A[:T] = a
    C[:T] = c
    a_orig = A.copy()
    c_orig = C.copy()

    work = 0
    depth = 0

    # Up-sweep: each level folds left siblings into right siblings.
    for d in range(levels):
        half = 1 << d
        right = np.arange((half << 1) - 1, P, half << 1)
        left = right - half
        acc_a = A[left].copy()
        acc_c = C[left].copy()
        _combine_into(acc_a, acc_c, A[right], C[right])
        A[right] = acc_a
        C[right] = acc_c
        work += len(right)
        depth += 1

    # Down-sweep: root becomes the identity, prefixes flow down.
    A[P - 1] = 1
    C[P - 1] = 0
    for d in reversed(range(levels)):
        half = 1 << d
        right = np.arange((half << 1) - 1, P, half << 1)
        left = right - half
        t_a = A[left].copy()
        t_c = C[left].copy()
        A[left] = A[right]
        C[left] = C[right]
        # right = parent_prefix o left_subtree_total
        acc_a = A[right].copy()
        acc_c = C[right].copy()
        _combine_into(acc_a, acc_c, t_a, t_c)
        A[right] = acc_a
        C[right] = acc_c
        work += len(right)
        depth += 1

    # Exclusive -> inclusive: fold each original pair back in.
    _combine_into(A, C, a_orig, c_orig)
    work += P
    depth += 1

    return C[:T], ScanStats(length=T, padded_length=P, work=work, depth=depth)


def _recurrence_data(x_data, decay, scale, stats_sink=None):
    T = x_data.shape[0]
    a = np.full(T, decay, dtype=x_data.dtype)
    h, stats = pair_scan(a, x_data * x_data.dtype.type(scale))
    if stats_sink is not None:
        stats_sink.append(stats)
    return h


def linrec_scan(x, decay, scale, stats_sink=None):
    """Taped h[t] = decay * h[t-1] + scale * x[t] over tensor x of shape (T, ...).

    ``stats_sink``: optional list; forward-pass ScanStats get appended to it.
    """
    decay = float(decay)
    scale = float(scale)
    if not np.isfinite(decay) or not np.isfinite(scale):
        raise ContractError(f"linrec_scan coefficients must be finite, got "
                            f"decay={decay}, scale={scale}")
    h = _recurrence_data(x.data, decay, scale, stats_sink)

    def backward(gouts):
        g = gouts[0]
        rev = _recurrence_data(g[::-1], decay, scale)
        return (rev[::-1].copy(),)

    return taped_op((x,), h, backward)


def prefix_sum(x, stats_sink=None):
    """Taped inclusive cumulative sum along axis 0 (decay 1, scale 1)."""
    return linrec_scan(x, 1.0, 1.0, stats_sink)


@dataclass
class LinearRecurrence:
    """A fixed (decay, scale) recurrence, callable on tensors.

    The integrate-without-reset dynamics both parallel vanilla neurons reduce
    to: IF is (1, 1), LIF with time constant tau is (1 - 1/tau, 1/tau).
    """

    decay: float
    scale: float

    def __call__(self, x, stats_sink=None):
        return linrec_scan(x, self.decay, self.scale, stats_sink)
