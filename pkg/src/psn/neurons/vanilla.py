"""Serial IF/LIF neurons, and their reset-free scan-parallel form.

The serial dynamics are the classic three stages per time step: charge
(IF: H[t] = V[t-1] + X[t]; LIF: H[t] = (1 - 1/tau_m) V[t-1] + X[t]/tau_m,
resting potential 0), fire (Theta against v_th with surrogate gradient),
reset (hard: jump to v_reset; soft: subtract v_th; none: V = H). Initial
potential is 0.

With reset_mode "none" the charge is a first-order linear recurrence and
``parallel_no_reset`` computes the whole charge history with one scan plus
one firing op. Any reset makes the recurrence nonlinear in the spikes, so
asking for a parallel reset path is a contract error by design, not a
missing feature.

``detach_reset`` blocks the gradient through the S[t] that appears inside
the reset equation only; the emitted spike keeps its surrogate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..scan import linrec_scan, prefix_sum
from ..tensor import Tensor, add, scalar_affine, split_rows, stack_rows, taped_op
from .surrogate import SurrogateConfig, heaviside_surrogate
from .trace import SpikeTrace


@dataclass
class VanillaNeuronParams:
    kind: str = "lif"  # "if" | "lif"
    tau_m: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "hard"  # "hard" | "soft" | "none"
    detach_reset: bool = False

    def __post_init__(self):
        if self.kind not in ("if", "lif"):
            raise ContractError(f"unknown vanilla neuron kind {self.kind!r}")
        if self.reset_mode not in ("hard", "soft", "none"):
            raise ContractError(f"unknown reset_mode {self.reset_mode!r}")
        if self.kind == "lif" and not self.tau_m > 1:
            raise ContractError(
                f"LIF needs tau_m > 1, got {self.tau_m}")
        if self.reset_mode == "hard" and not self.v_th > self.v_reset:
            raise ContractError(
                f"hard reset needs v_th > v_reset, got v_th={self.v_th}, "
                f"v_reset={self.v_reset}")


def charge(x_t, v_prev, p):
    """One charge step, Eq.-for-Eq. the iterative form."""
    if p.kind == "if":
        return add(v_prev, x_t)
    inv = 1.0 / p.tau_m
    return add(scalar_affine(v_prev, 1.0 - inv, 0.0),
               scalar_affine(x_t, inv, 0.0))


def apply_reset(h, s, p, relaxed=False):
    """Post-spike membrane update, fused into one taped op per step.

    ``relaxed`` keeps the hard reset in its algebraic form h + s*(v_r - h)
    so a fractional spike value resets fractionally; the branchy np.where
    would treat any nonzero s as a full reset. On binary s the two forms
    differ only by rounding in the s=1 case, which is why the exact path
    keeps np.where. The backward below is the derivative of the algebraic
    form either way.
    """
    if p.reset_mode == "none":
        return h

    hd, sd = h.data, s.data
    detach = p.detach_reset

    if p.reset_mode == "hard":
        v_reset = hd.dtype.type(p.v_reset)
        if relaxed:
            out = hd + sd * (v_reset - hd)
        else:
            out = np.where(sd != 0, v_reset, hd)

        def backward(gouts):
            g = gouts[0]
            dh = g * (1.0 - sd) if h.requires_grad else None
            ds = None
            if s.requires_grad and not detach:
                ds = g * (v_reset - hd)
            return dh, ds

    else:  # soft
        v_th = hd.dtype.type(p.v_th)
        out = hd - v_th * sd

        def backward(gouts):
            g = gouts[0]
            dh = g if h.requires_grad else None
            ds = None
            if s.requires_grad and not detach:
                ds = g * (-v_th)
            return dh, ds

    return taped_op((h, s), out, backward)


def vanilla_step(x_t, v_prev, p, cfg=None, relaxed=False):
    """(spike, new potential, charge) for one time step."""
    h = charge(x_t, v_prev, p)
    s = heaviside_surrogate(h, p.v_th, cfg, relaxed=relaxed)
    v = apply_reset(h, s, p, relaxed=relaxed)
    return s, v, h


def vanilla_sequence(x, p, cfg=None, relaxed=False):
    """Run the serial loop over the leading time axis of ``x``."""
    rows = split_rows(x)
    v = Tensor(np.zeros(rows[0].data.shape, dtype=x.data.dtype))
    s_rows = []
    h_rows = []
    for x_t in rows:
        s, v, h = vanilla_step(x_t, v, p, cfg, relaxed=relaxed)
        s_rows.append(s)
        h_rows.append(h)
    return SpikeTrace(stack_rows(s_rows), h_rows=h_rows)


def parallel_no_reset(x, p, cfg=None, relaxed=False, stats_sink=None):
    """Whole-sequence charge by scan, then one firing op.

    Requires reset_mode "none": resetting couples H[t] to the spike history
    nonlinearly and cannot be written as a linear scan.
    """
    if p.reset_mode != "none":
        raise ContractError(
            "reset is not parallelizable: the scan form only exists for "
            "reset_mode='none'")
    if p.kind == "if":
        h = prefix_sum(x, stats_sink)
    else:
        inv = 1.0 / p.tau_m
        h = linrec_scan(x, 1.0 - inv, inv, stats_sink)
    s = heaviside_surrogate(h, p.v_th, cfg, relaxed=relaxed)
    return SpikeTrace(s, h=h)
