"""Wall-time and memory benchmarks for the neuron kernels.

Two grids (inference and training) time every requested neuron kind against
the serial hard-reset LIF loop, which is the baseline every ratio is computed
from. The memory probe runs one training step of the same synapse stack with
no neuron, an IF neuron, and a dense parallel neuron, under the library's own
buffer accounting rather than OS-level RSS.

Caveats that keep these numbers honest: everything here is CPU wall time in a
single process, so the ratios are directional and machine-dependent. The
serial baseline pays one tape entry per time step; the parallel kinds pay one
matmul. That asymmetry is the point being measured, not an unfairness.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .neurons import (MaskedPSNParams, PSNParams, SlidingPSNParams,
                      VanillaNeuronParams, masked_psn_forward,
                      parallel_no_reset, psn_forward, spsn_forward,
                      vanilla_sequence)
from .tensor import Tape, Tensor, matmul, sum_all, tracker

BENCH_KINDS = ("lif", "if", "lif-no-reset", "if-no-reset",
               "psn", "masked-psn", "spsn")
MODES = ("inference", "training")
MEMORY_CONFIGURATIONS = ("no_neuron", "if_neuron", "psn")

DEFAULT_N_VALUES = (2 ** 8, 2 ** 12, 2 ** 16, 2 ** 20)
DEFAULT_T_VALUES = (2, 4, 8, 16, 32, 64)

# N at or above this is dropped when skip_large is set.
SKIP_LARGE_N = 2 ** 20

CSV_COLUMNS = ("neuron_kind", "N", "T", "mode",
               "wall_time_seconds", "ratio_vs_baseline", "status")


@dataclass
class BenchConfig:
    neuron_kinds: tuple = ("lif", "psn")
    n_values: tuple = DEFAULT_N_VALUES
    t_values: tuple = DEFAULT_T_VALUES
    mode: str = "inference"
    warmup_iters: int = 1
    measured_iters: int = 5
    seed: int = 0
    skip_large: bool = False
    # Recorded so reports from different machines stay comparable; the
    # benchmark itself never spawns threads.
    threads: int | None = None

    def __post_init__(self):
        self.neuron_kinds = tuple(self.neuron_kinds)
        self.n_values = tuple(int(n) for n in self.n_values)
        self.t_values = tuple(int(t) for t in self.t_values)
        for kind in self.neuron_kinds:
            if kind not in BENCH_KINDS:
                raise ContractError(
                    f"unknown neuron kind {kind!r}; expected one of "
                    f"{BENCH_KINDS}")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got "
                                f"{self.mode!r}")
        if self.measured_iters < 3:
            raise ContractError(
                f"median timing needs measured_iters >= 3, got "
                f"{self.measured_iters}")
        if self.warmup_iters < 0:
            raise ContractError(
                f"warmup_iters must be >= 0, got {self.warmup_iters}")
        if not self.neuron_kinds or not self.n_values or not self.t_values:
            raise ContractError("benchmark grid must be non-empty")


@dataclass
class BenchRecord:
    neuron_kind: str
    N: int
    T: int
    mode: str
    wall_time_seconds: float
    ratio_vs_baseline: float
    status: str = "ok"  # "ok" | "skipped"

    def csv_row(self):
        return (f"{self.neuron_kind},{self.N},{self.T},{self.mode},"
                f"{self.wall_time_seconds:.6g},{self.ratio_vs_baseline:.6g},"
                f"{self.status}")


@dataclass
class MemoryRecord:
    configuration: str
    T: int
    N: int
    peak_tracked_bytes: int


def bench_input(seed, N, T):
    """The one input array every kind at (N, T) must see, byte for byte."""
    rng = np.random.default_rng([seed, N, T])
    return rng.standard_normal((T, N), dtype=np.float32)


def _make_params(kind, T, seed):
    rng = np.random.default_rng([seed, T])
    if kind in ("lif", "if"):
        return VanillaNeuronParams(kind=kind, reset_mode="hard")
    if kind in ("lif-no-reset", "if-no-reset"):
        return VanillaNeuronParams(kind=kind[:-len("-no-reset")],
                                   reset_mode="none")
    if kind == "psn":
        return PSNParams.create(T, rng)
    if kind == "masked-psn":
        return MaskedPSNParams.create(T, min(4, T), rng)
    if kind == "spsn":
        return SlidingPSNParams.create(min(4, T))
    raise ContractError(f"unknown neuron kind {kind!r}")


def _forward(kind, x, params):
    if kind in ("lif", "if"):
        return vanilla_sequence(x, params)
    if kind in ("lif-no-reset", "if-no-reset"):
        return parallel_no_reset(x, params)
    if kind == "psn":
        return psn_forward(x, params)
    if kind == "masked-psn":
        return masked_psn_forward(x, params)
    return spsn_forward(x, params)


def _make_step(kind, mode, x_data, params):
    if mode == "inference":
        def step():
            _forward(kind, Tensor(x_data), params)
    else:
        def step():
            x = Tensor(x_data, requires_grad=True)
            with Tape() as tape:
                trace = _forward(kind, x, params)
                loss = sum_all(trace.s)
                tape.backward(loss)
    return step


def _time_median(step, warmup_iters, measured_iters):
    for _ in range(warmup_iters):
        step()
    samples = []
    for _ in range(measured_iters):
        t0 = time.perf_counter()
        step()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _skipped(kind, N, T, mode):
    return BenchRecord(kind, N, T, mode, float("nan"), float("nan"),
                       status="skipped")


def _run_cell(cfg, mode, N, T):
    """All records for one (N, T) grid cell, baseline timed exactly once."""
    if cfg.skip_large and N >= SKIP_LARGE_N:
        return [_skipped(kind, N, T, mode) for kind in cfg.neuron_kinds]

    x_data = bench_input(cfg.seed, N, T)

    try:
        baseline = _time_median(
            _make_step("lif", mode, x_data, _make_params("lif", T, cfg.seed)),
            cfg.warmup_iters, cfg.measured_iters)
    except MemoryError:
        baseline = None

    records = []
    for kind in cfg.neuron_kinds:
        if kind == "lif":
            if baseline is None:
                records.append(_skipped(kind, N, T, mode))
            else:
                records.append(BenchRecord(kind, N, T, mode, baseline, 1.0))
            continue
        try:
            wall = _time_median(
                _make_step(kind, mode, x_data,
                           _make_params(kind, T, cfg.seed)),
                cfg.warmup_iters, cfg.measured_iters)
        except MemoryError:
            records.append(_skipped(kind, N, T, mode))
            continue
        ratio = baseline / wall if baseline is not None else float("nan")
        records.append(BenchRecord(kind, N, T, mode, wall, ratio))
    return records


def _run_grid(cfg, mode):
    records = []
    for N in cfg.n_values:
        for T in cfg.t_values:
            records.extend(_run_cell(cfg, mode, N, T))
    return records


def bench_forward(cfg):
    """Time one untaped forward pass per (kind, N, T)."""
    return _run_grid(cfg, "inference")


def bench_training(cfg):
    """Time forward plus backward of the spike-count loss per (kind, N, T)."""
    return _run_grid(cfg, "training")


def run_bench(cfg):
    if cfg.mode == "inference":
        return bench_forward(cfg)
    return bench_training(cfg)


def _measure_config(configuration, T, N):
    """Peak tracked bytes for one training step of the shared stack.

    The stack is linear -> (nothing | IF | dense parallel neuron) -> linear,
    x and both weights allocated before the window opens so only step-local
    buffers count.
    """
    rng = np.random.default_rng([97, T, N])
    scale = 1.0 / np.sqrt(N)
    x = Tensor(rng.standard_normal((T, N), dtype=np.float32))
    w_in = Tensor(scale * rng.standard_normal((N, N), dtype=np.float32),
                  requires_grad=True)
    w_out = Tensor(scale * rng.standard_normal((N, N), dtype=np.float32),
                   requires_grad=True)
    if configuration == "if_neuron":
        neuron = VanillaNeuronParams(kind="if", reset_mode="hard")
    elif configuration == "psn":
        neuron = PSNParams.create(T, rng)
    elif configuration != "no_neuron":
        raise ContractError(
            f"unknown memory configuration {configuration!r}; expected one "
            f"of {MEMORY_CONFIGURATIONS}")

    tracker.start()
    with Tape() as tape:
        pre = matmul(x, w_in)
        if configuration == "no_neuron":
            z = pre
        elif configuration == "if_neuron":
            z = vanilla_sequence(pre, neuron).s
        else:
            z = psn_forward(pre, neuron).s
        loss = sum_all(matmul(z, w_out))
        tape.backward(loss)
    return int(tracker.stop())


def measure_memory(T=16, N=1024):
    """One MemoryRecord per configuration at identical (T, N)."""
    return [MemoryRecord(c, T, N, _measure_config(c, T, N))
            for c in MEMORY_CONFIGURATIONS]


def bench_memory(T=16, N=1024):
    """(peak_no_neuron, peak_if, peak_psn, excess ratio IF/parallel).

    The ratio divides what the IF neuron adds over the bare stack by what the
    dense parallel neuron adds; serial IF retains both the charge and the
    post-reset potential per step, the parallel kind only its charge, so the
    expected value sits near 2.
    """
    peaks = {r.configuration: r.peak_tracked_bytes for r in
             measure_memory(T, N)}
    d_if = peaks["if_neuron"] - peaks["no_neuron"]
    d_psn = peaks["psn"] - peaks["no_neuron"]
    ratio = d_if / d_psn if d_psn > 0 else float("nan")
    return (peaks["no_neuron"], peaks["if_neuron"], peaks["psn"], ratio)


def to_csv(records):
    """Stable column order, one record per line, header first."""
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def _cell_text(record):
    if record.status != "ok":
        return "skipped"
    return (f"{record.wall_time_seconds * 1e3:.2f}ms "
            f"x{record.ratio_vs_baseline:.2f}")


def grid_table(records):
    """One block per (kind, mode): T rows, N columns, time and ratio."""
    by_block = {}
    for r in records:
        by_block.setdefault((r.neuron_kind, r.mode), []).append(r)
    out = []
    for (kind, mode), block in by_block.items():
        n_values = sorted({r.N for r in block})
        t_values = sorted({r.T for r in block})
        cells = {(r.N, r.T): _cell_text(r) for r in block}
        width = max(len("skipped"), 9 + len(f"N={max(n_values)}"),
                    *(len(c) for c in cells.values()))
        out.append(f"{kind} ({mode}), time per pass and ratio vs serial LIF")
        header = ["T \\ N".rjust(8)]
        header.extend(f"N={n}".rjust(width) for n in n_values)
        out.append("  ".join(header))
        for t in t_values:
            row = [f"{t}".rjust(8)]
            row.extend(cells.get((n, t), "-").rjust(width)
                       for n in n_values)
            out.append("  ".join(row))
        out.append("")
    return "\n".join(out).rstrip("\n") + "\n"
