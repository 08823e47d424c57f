"""Sequence classification models: linear synapses alternating with neurons.

A model is built from a ModelSpec: an ordered list of layer descriptions,
each either ("linear", in_dim, out_dim) or ("neuron", kind, opts). Inputs
are (T, N, C) sequences; linear layers act per step on the channel axis,
neuron layers flatten (N, C) into one batch axis, run their dynamics over
time, and restore the shape. The forward pass emits per-step logits
(T, N, num_classes); heads and losses decide how to collapse time.

Neuron kinds: "psn", "masked-psn", "spsn", "if", "lif" (serial, reset per
opts), "if-no-reset", "lif-no-reset" (scan-parallel). PSN and masked PSN
need the sequence length at build time because their weights are T x T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DivergenceError
from ..neurons import (MaskedPSNParams, PSNParams, SlidingPSNParams,
                       SurrogateConfig, VanillaNeuronParams,
                       masked_psn_forward, parallel_no_reset, psn_forward,
                       spsn_forward, vanilla_sequence)
from ..tensor import Tensor, add, matmul, reshape

NEURON_KINDS = ("psn", "masked-psn", "spsn", "if", "lif",
                "if-no-reset", "lif-no-reset")
HEADS = ("time-averaged", "per-step")


@dataclass
class ModelSpec:
    """Layer list, classifier head, and the seed that fixes every init."""

    layers: tuple
    head: str = "time-averaged"
    seed: int = 0
    num_steps: int | None = None

    def __post_init__(self):
        self.layers = tuple(tuple(l) for l in self.layers)
        if self.head not in HEADS:
            raise ContractError(f"unknown head {self.head!r}")
        if not self.layers:
            raise ContractError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer[0] == "linear":
                if len(layer) != 3:
                    raise ContractError(
                        f"linear layer {i} must be ('linear', in, out)")
            elif layer[0] == "neuron":
                if len(layer) not in (2, 3):
                    raise ContractError(
                        f"neuron layer {i} must be ('neuron', kind[, opts])")
                kind = layer[1]
                if kind not in NEURON_KINDS:
                    raise ContractError(f"unknown neuron kind {kind!r}")
                if i == 0 or self.layers[i - 1][0] != "linear":
                    raise ContractError(
                        f"neuron layer {i} must be preceded by a weighted "
                        f"layer")
                if kind in ("psn", "masked-psn") and self.num_steps is None:
                    raise ContractError(
                        f"{kind} layers need ModelSpec.num_steps")
            else:
                raise ContractError(f"unknown layer type {layer[0]!r}")


class LinearLayer:
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype),
            requires_grad=True)
        self.bias = Tensor(
            rng.uniform(-bound, bound, size=out_dim).astype(dtype),
            requires_grad=True)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x):
        T, N = x.data.shape[0], x.data.shape[1]
        flat = reshape(x, (T * N, self.in_dim))
        y = add(matmul(flat, self.weight), self.bias)
        return reshape(y, (T, N, self.out_dim))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class NeuronLayer:
    def __init__(self, kind, opts, num_steps, rng, dtype=np.float32):
        opts = dict(opts or {})
        self.kind = kind
        self.cfg = SurrogateConfig(alpha=opts.pop("alpha", 4.0))
        self.last_trace = None

        if kind == "psn":
            self.params = PSNParams.create(num_steps, rng, dtype)
        elif kind == "masked-psn":
            order = opts.pop("order", None)
            if order is None:
                raise ContractError("masked-psn needs opts['order']")
            self.params = MaskedPSNParams.create(num_steps, order, rng, dtype)
        elif kind == "spsn":
            order = opts.pop("order", None)
            if order is None:
                raise ContractError("spsn needs opts['order']")
            self.params = SlidingPSNParams.create(order, dtype)
        else:
            base = kind.replace("-no-reset", "")
            reset = "none" if kind.endswith("-no-reset") else \
                opts.pop("reset_mode", "hard")
            self.params = VanillaNeuronParams(
                kind=base,
                tau_m=opts.pop("tau_m", 2.0),
                v_th=opts.pop("v_th", 1.0),
                v_reset=opts.pop("v_reset", 0.0),
                reset_mode=reset,
                detach_reset=opts.pop("detach_reset", False))
        if opts:
            raise ContractError(
                f"unknown neuron options for {kind!r}: {sorted(opts)}")

    def __call__(self, x):
        T, N, C = x.data.shape
        flat = reshape(x, (T, N * C))
        if self.kind == "psn":
            trace = psn_forward(flat, self.params, self.cfg)
        elif self.kind == "masked-psn":
            trace = masked_psn_forward(flat, self.params, self.cfg)
        elif self.kind == "spsn":
            trace = spsn_forward(flat, self.params, self.cfg)
        elif self.kind in ("if-no-reset", "lif-no-reset"):
            trace = parallel_no_reset(flat, self.params, self.cfg)
        else:
            trace = vanilla_sequence(flat, self.params, self.cfg)
        self.last_trace = trace
        return reshape(trace.s, (T, N, C))

    def parameters(self):
        if isinstance(self.params, VanillaNeuronParams):
            return {}
        if isinstance(self.params, SlidingPSNParams):
            return {"kernel": self.params.kernel,
                    "threshold": self.params.threshold}
        return {"weight": self.params.weight,
                "threshold": self.params.threshold}


class Model:
    """A built ModelSpec: owns parameters, runs forward, tracks traces."""

    def __init__(self, spec, num_channels):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.layers = []
        dim = num_channels
        for layer in spec.layers:
            if layer[0] == "linear":
                _, in_dim, out_dim = layer
                if in_dim != dim:
                    raise ContractError(
                        f"linear layer expects {in_dim} channels but the "
                        f"previous layer produces {dim}")
                self.layers.append(LinearLayer(in_dim, out_dim, rng))
                dim = out_dim
            else:
                kind = layer[1]
                opts = layer[2] if len(layer) == 3 else {}
                self.layers.append(
                    NeuronLayer(kind, opts, spec.num_steps, rng))
        self.num_classes = dim
        self.last_outputs = []

    def forward(self, x):
        """(T, N, C) input tensor -> (T, N, num_classes) per-step logits."""
        self.last_outputs = [("input", x)]
        out = x
        for i, layer in enumerate(self.layers):
            out = layer(out)
            self.last_outputs.append((f"layer{i}.output", out))
        return out

    __call__ = forward

    def neuron_layers(self):
        return [l for l in self.layers if isinstance(l, NeuronLayer)]

    def firing_rates(self):
        """Mean spike rate per neuron layer from the most recent forward."""
        rates = []
        for layer in self.neuron_layers():
            if layer.last_trace is None:
                raise ContractError("no forward pass has run yet")
            rates.append(layer.last_trace.firing_rate)
        return rates

    def set_masked_lambda(self, lam):
        for layer in self.neuron_layers():
            if isinstance(layer.params, MaskedPSNParams):
                layer.params.set_lambda(lam)

    def masked_lambda(self):
        for layer in self.neuron_layers():
            if isinstance(layer.params, MaskedPSNParams):
                return layer.params.lam
        return None

    def named_parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"layer{i}.{name}"] = p
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def state_dict(self):
        return {name: p.data.copy()
                for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ContractError(
                f"state dict mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ContractError(
                    f"{name}: checkpoint shape {arr.shape} vs model shape "
                    f"{p.data.shape}")
            p.data = arr.copy()

    def find_nonfinite(self):
        """Name of the first tensor with a non-finite entry, forward order."""
        for name, t in self.last_outputs:
            if not np.all(np.isfinite(t.data)):
                return name
        return None

    def raise_divergence(self, loss_value):
        name = self.find_nonfinite()
        raise DivergenceError(name or "loss",
                              f"training diverged (loss={loss_value}); "
                              f"non-finite values first appeared in "
                              f"{name or 'loss'!r}")
