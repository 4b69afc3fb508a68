"""Places a network in simulated L2 and runs inferences on the engine.

This plays the part of the controlling core: it allocates every buffer
according to an :class:`~bnnsim.memsim.AllocationPolicy`, writes weights and
thresholds once, and for each input writes the feature map and issues one
engine job per layer.  The classifier's raw sums are read straight out of the
accumulator bank and never touch memory.
"""

from __future__ import annotations

import numpy as np

from .bintensor import WORD_BYTES, BinaryTensor, NetworkSpec, word_groups
from .errors import ShapeError
from .memsim import SRAM_EXEC, AddressRange, AllocationPolicy, Allocator, MemoryModel
from .xne import XNE, CycleModel, JobDescriptor, JobStats, weight_stream

INSTRUCTION_BYTES = 4096


def tensor_bytes(shape) -> int:
    c, h, w = shape
    return word_groups(c) * WORD_BYTES * h * w


class DeployedNetwork:
    def __init__(self, net: NetworkSpec, mem: MemoryModel, policy: AllocationPolicy = SRAM_EXEC,
                 cycle_model: CycleModel | None = None, instruction_bytes: int = INSTRUCTION_BYTES):
        self.net = net
        self.mem = mem
        self.policy = policy
        self.xne = XNE(mem, cycle_model)
        self.stats = JobStats()
        alloc = Allocator(mem.map)
        self.placement: dict[str, AddressRange] = {}

        def place(key: str, role: str, size: int) -> AddressRange:
            rng = alloc.allocate(policy, role, size)
            self.placement[key] = rng
            return rng

        code = place("instructions", "instructions", instruction_bytes)
        # stand-in program image; never read back
        mem.write(code.start, np.arange(instruction_bytes, dtype=np.uint32).astype(np.uint8))

        self.input_range = place("input", "input_features", tensor_bytes(net.input_shape))
        self.jobs: list[JobDescriptor] = []
        prev = self.input_range
        last = len(net.layers) - 1
        for i, (layer, (s_in, s_out)) in enumerate(zip(net.layers, net.shapes())):
            w = place(f"layer{i}.weights", "weights", layer.weight_bytes)
            mem.write(w.start, weight_stream(layer))
            if i < last:
                t = place(f"layer{i}.thresholds", "thresholds", layer.out_channels)
                mem.write(t.start, layer.thresholds)
                o = place(f"layer{i}.output", "output_features", tensor_bytes(s_out))
                job = JobDescriptor(layer, s_in, prev.start, w.start, t.start, o.start)
                prev = o
            else:
                job = JobDescriptor(layer, s_in, prev.start, w.start, 0, 0, binarize=False)
            job.validate(mem.map)
            self.jobs.append(job)

    def infer(self, x: BinaryTensor) -> np.ndarray:
        """Class scores for one input."""
        if x.shape != self.net.input_shape:
            raise ShapeError(f"input shape {x.shape} != network input {self.net.input_shape}")
        self.mem.write(self.input_range.start, x.words)
        raw = None
        for job in self.jobs:
            st = self.xne.run_job(job)
            self.stats.merge(st)
            raw = st.raw_outputs
        return raw.reshape(-1)

    def predict(self, x: BinaryTensor) -> int:
        return int(np.argmax(self.infer(x)))

    def footprint_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rng in self.placement.values():
            kind = self.mem.map[rng.region].kind
            out[kind] = out.get(kind, 0) + rng.size
        return out
