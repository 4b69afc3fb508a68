"""Functional, cycle-counting model of the XNOR neural engine.

Datapath: a 128-bit stationary input buffer, 128 XNOR lanes followed by a
popcount tree, and a bank of 128 16-bit accumulators.  One weight word is
consumed per cycle, so a full 128x128 binary matrix-vector product (MVP) takes
128 cycles.  After the inner loops finish, 8-bit thresholds are streamed in,
left-shifted and compared (``>=``) against the accumulators; only the
binarized output word is written back.  All feature, weight and threshold
traffic goes through a :class:`~bnnsim.memsim.MemoryModel`.

Loop nest of :meth:`XNE.run_job`, outermost first: output pixel, output-channel
group, kernel row, kernel column, input-channel group, then the 128-cycle MVP.

Weight memory layout (see :func:`weight_stream`): for each output group of up
to 128 channels, for each kernel tap, for each input group, the group's weight
words are contiguous, so every MVP reads one burst.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bintensor import (
    LINEAR, POOL_MAX2, WORD_BITS, WORD_BYTES, LayerSpec, channel_mask, word_groups,
)
from .errors import BusError, ShapeError
from .memsim import MemoryMap, MemoryModel

LANES = 128
IDEAL_OPS_PER_CYCLE = 2 * LANES
# 129 Gop/s at 565.8 MHz
UTILIZATION = 129e9 / (IDEAL_OPS_PER_CYCLE * 565.8e6)


def effective_ops_per_cycle(utilization: float = UTILIZATION) -> float:
    """Sustained binary ops per cycle: XNOR + accumulate on 128 lanes, derated."""
    return IDEAL_OPS_PER_CYCLE * utilization


@dataclass(frozen=True)
class CycleModel:
    """Cycle costs on top of the one-weight-word-per-cycle datapath.

    ``mvp_overhead`` covers the input-buffer load and pipeline fill/drain of one
    matrix-vector product; per output group the thresholds stream at 16 bytes
    per cycle and the writeback takes one cycle.
    """

    mvp_overhead: int = 15
    writeback: int = 1
    job_overhead: int = 0
    port_bytes: int = 16

    def mvp(self, lanes: int) -> int:
        return lanes + self.mvp_overhead

    def group(self, lanes: int, binarize: bool = True) -> int:
        if not binarize:
            return self.writeback
        return -(-lanes // self.port_bytes) + self.writeback


@dataclass
class JobStats:
    cycles: int = 0
    weight_words_read: int = 0
    feature_words_read: int = 0
    threshold_bytes_read: int = 0
    output_words_written: int = 0
    mvps: int = 0
    # raw classifier sums (C_out, H, W) for jobs that skip binarization
    raw_outputs: np.ndarray | None = field(default=None, repr=False)

    def merge(self, other: "JobStats") -> None:
        self.cycles += other.cycles
        self.weight_words_read += other.weight_words_read
        self.feature_words_read += other.feature_words_read
        self.threshold_bytes_read += other.threshold_bytes_read
        self.output_words_written += other.output_words_written
        self.mvps += other.mvps


class AccumulatorBank:
    """128 unsigned 16-bit accumulators that wrap modulo 2**16."""

    def __init__(self, lanes: int = LANES):
        self.values = np.zeros(lanes, dtype=np.uint16)

    def clear(self) -> None:
        self.values[:] = 0

    def accumulate(self, popcounts: np.ndarray) -> None:
        n = popcounts.size
        self.values[:n] += popcounts.astype(np.uint16)

    def binarize(self, shifted_thresholds: np.ndarray) -> np.ndarray:
        n = shifted_thresholds.size
        return self.values[:n] >= shifted_thresholds


def weight_stream(layer: LayerSpec) -> np.ndarray:
    """Weights reordered into the streaming layout (flat uint8)."""
    w = layer.weights
    parts = []
    for og in range(layer.out_groups):
        block = w[og * LANES:(og + 1) * LANES]
        parts.append(block.transpose(1, 2, 3, 0, 4).reshape(-1))
    return np.concatenate(parts)


def weight_block_offset(layer: LayerSpec, og: int, ky: int, kx: int, ig: int) -> int:
    """Byte offset of the MVP weight burst for (output group, tap, input group)."""
    lanes = min(LANES, layer.out_channels - og * LANES)
    group_bytes = LANES * layer.inner_steps * WORD_BYTES
    step = (ky * layer.kernel_w + kx) * layer.in_groups + ig
    return og * group_bytes + step * lanes * WORD_BYTES


@dataclass(frozen=True)
class JobDescriptor:
    """Contents of the engine's configuration registers for one layer."""

    layer: LayerSpec
    input_shape: tuple[int, int, int]
    input_base: int
    weight_base: int
    threshold_base: int
    output_base: int
    binarize: bool = True

    @property
    def geometry(self) -> tuple[int, int, int]:
        """Input geometry the loop nest walks (linear inputs are flattened)."""
        if self.layer.kind == LINEAR:
            return (self.layer.in_channels, 1, 1)
        return tuple(self.input_shape)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.layer.output_shape(self.input_shape)

    def ranges(self) -> dict[str, tuple[int, int]]:
        c, h, w = self.geometry
        out = {
            "input": (self.input_base, word_groups(c) * WORD_BYTES * h * w),
            "weights": (self.weight_base, self.layer.weight_bytes),
        }
        if self.binarize:
            co, ho, wo = self.output_shape
            out["thresholds"] = (self.threshold_base, self.layer.out_channels)
            out["output"] = (self.output_base, word_groups(co) * WORD_BYTES * ho * wo)
        return out

    def validate(self, mmap: MemoryMap) -> None:
        self.layer.conv_shape(self.input_shape)
        self.layer.check_accumulator()
        ranges = self.ranges()
        for name, (base, size) in ranges.items():
            try:
                mmap.spans(base, size)
            except BusError as exc:
                raise BusError(f"{name} range [{base:#x}, +{size}) not mapped: {exc}") from None
        if "output" in ranges:
            ob, osz = ranges["output"]
            for name, (base, size) in ranges.items():
                if name != "output" and base < ob + osz and ob < base + size:
                    raise ShapeError(f"output range overlaps {name} range")


class XNE:
    """One engine instance bound to one memory model (single-threaded)."""

    def __init__(self, mem: MemoryModel, cycle_model: CycleModel | None = None):
        self.mem = mem
        self.cycle_model = cycle_model or CycleModel()
        self.acc = AccumulatorBank()
        self.stats = JobStats()

    def load_input_buffer(self, addr: int) -> np.ndarray:
        """Fetch one 128-bit feature word (16 bytes) into the input buffer."""
        word = self.mem.read(addr, WORD_BYTES)
        self.stats.feature_words_read += 1
        return word

    def matvec_128(self, input_word: np.ndarray, weight_base: int, lanes: int = LANES,
                   mask: np.ndarray | None = None) -> np.ndarray:
        """Per-lane popcount(XNOR(input, weight_lane)) over ``lanes`` weight words.

        ``mask`` restricts the comparison to the valid input channels when the
        layer has fewer than 128 channels in this group.
        """
        w = self.mem.read(weight_base, lanes * WORD_BYTES).view(np.uint64).reshape(lanes, 2)
        x = np.asarray(input_word, dtype=np.uint8).view(np.uint64)
        xnor = ~(w ^ x)
        if mask is not None:
            xnor &= mask
        self.stats.weight_words_read += lanes
        self.stats.mvps += 1
        self.stats.cycles += self.cycle_model.mvp(lanes)
        return np.bitwise_count(xnor).sum(axis=1, dtype=np.int64)

    def run_job(self, job: JobDescriptor) -> JobStats:
        job.validate(self.mem.map)
        layer = job.layer
        self.stats = JobStats(cycles=self.cycle_model.job_overhead)
        c, h, w = job.geometry
        gin = word_groups(c)
        _, ho, wo = layer.conv_shape(job.input_shape)
        pooled = layer.pool == POOL_MAX2
        po, qo = (ho // 2, wo // 2) if pooled else (ho, wo)
        gout = layer.out_groups
        last_mask = None
        if c % WORD_BITS:
            last_mask = channel_mask(c)[-1].view(np.uint64)
        raw = None if job.binarize else np.zeros((layer.out_channels, ho, wo), dtype=np.int64)
        s, p = layer.stride, layer.padding

        for py in range(po):
            for px in range(qo):
                subpixels = ([(2 * py + dy, 2 * px + dx) for dy in (0, 1) for dx in (0, 1)]
                             if pooled else [(py, px)])
                for og in range(gout):
                    lanes = min(LANES, layer.out_channels - og * LANES)
                    bits = np.zeros(lanes, dtype=bool)
                    thr = None
                    for oy, ox in subpixels:
                        self.acc.clear()
                        for ky in range(layer.kernel_h):
                            iy = oy * s - p + ky
                            if not 0 <= iy < h:
                                continue
                            for kx in range(layer.kernel_w):
                                ix = ox * s - p + kx
                                if not 0 <= ix < w:
                                    continue
                                pix = job.input_base + (iy * w + ix) * gin * WORD_BYTES
                                for ig in range(gin):
                                    word = self.load_input_buffer(pix + ig * WORD_BYTES)
                                    wb = job.weight_base + weight_block_offset(layer, og, ky, kx, ig)
                                    mask = last_mask if ig == gin - 1 else None
                                    self.acc.accumulate(self.matvec_128(word, wb, lanes, mask))
                        if raw is not None:
                            raw[og * LANES:og * LANES + lanes, oy, ox] = self.acc.values[:lanes]
                            continue
                        if thr is None:
                            tb = self.mem.read(job.threshold_base + og * LANES, lanes)
                            self.stats.threshold_bytes_read += lanes
                            thr = tb.astype(np.uint16) << layer.shift
                        bits |= self.acc.binarize(thr)
                    self.stats.cycles += self.cycle_model.group(lanes, job.binarize)
                    if raw is not None:
                        continue
                    padded = np.zeros(WORD_BITS, dtype=bool)
                    padded[:lanes] = bits
                    out_word = np.packbits(padded, bitorder="little")
                    addr = job.output_base + ((py * qo + px) * gout + og) * WORD_BYTES
                    self.mem.write(addr, out_word)
                    self.stats.output_words_written += 1
        if raw is not None:
            self.stats.raw_outputs = raw
        return self.stats


def estimate_cycles(layer: LayerSpec, in_shape, cycle_model: CycleModel | None = None,
                    binarize: bool = True) -> int:
    """Cycle count :meth:`XNE.run_job` reports, computed without simulating."""
    cm = cycle_model or CycleModel()
    c, h, w = (layer.in_channels, 1, 1) if layer.kind == LINEAR else tuple(in_shape)
    _, ho, wo = layer.conv_shape(in_shape)
    s, p = layer.stride, layer.padding
    ty = np.array([sum(0 <= oy * s - p + k < h for k in range(layer.kernel_h)) for oy in range(ho)])
    tx = np.array([sum(0 <= ox * s - p + k < w for k in range(layer.kernel_w)) for ox in range(wo)])
    if layer.pool == POOL_MAX2:
        ty, tx = ty[:2 * (ho // 2)], tx[:2 * (wo // 2)]
        groups_per_lane = (ho // 2) * (wo // 2)
    else:
        groups_per_lane = ho * wo
    taps = int(ty.sum()) * int(tx.sum())
    mvps_per_group = taps * word_groups(c)
    total = cm.job_overhead
    for og in range(layer.out_groups):
        lanes = min(LANES, layer.out_channels - og * LANES)
        total += mvps_per_group * cm.mvp(lanes) + groups_per_lane * cm.group(lanes, binarize)
    return total


def network_utilization(net, cycle_model: CycleModel | None = None) -> float:
    """Fraction of cycles in which the datapath consumes a weight word on ``net``."""
    busy = CycleModel(mvp_overhead=0, writeback=0, job_overhead=0)
    ideal = total = 0
    for i, (layer, (s_in, _)) in enumerate(zip(net.layers, net.shapes())):
        binarize = i < len(net.layers) - 1
        ideal += estimate_cycles(layer, s_in, busy, binarize)
        total += estimate_cycles(layer, s_in, cycle_model, binarize)
    return ideal / total
