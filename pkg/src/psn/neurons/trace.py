"""Result container shared by every neuron layer."""

from __future__ import annotations

from ..tensor import stack_rows


class SpikeTrace:
    """Spikes plus the pre-spike potential that produced them.

    ``s`` is the (T, ...) binary spike tensor. ``h`` is the matching charge
    history; serial layers build it lazily from per-step rows so that merely
    running a sequence does not pay for stacking T rows nobody reads.
    """

    __slots__ = ("s", "_h", "_h_rows")

    def __init__(self, s, h=None, h_rows=None):
        self.s = s
        self._h = h
        self._h_rows = h_rows

    @property
    def h(self):
        if self._h is None:
            if self._h_rows is None:
                raise AttributeError("trace carries no charge history")
            self._h = stack_rows(self._h_rows)
            self._h_rows = None
        return self._h

    @property
    def firing_rate(self):
        """Mean spike count over every entry, in [0, 1]."""
        return float(self.s.data.mean())
