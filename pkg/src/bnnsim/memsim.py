"""Hybrid SCM/SRAM memory model with bit-error injection.

The default map mirrors a 520 kB L2: a private 64 kB block (8 kB SCM + 56 kB
SRAM) and four word-interleaved banks of 112 kB SRAM + 2 kB SCM each.  SCM
regions never see faults.  SRAM regions see

* transient read faults: each bit of every read is flipped independently with
  ``read_ber``; the stored cell is left intact;
* persistent write faults: each written bit is stored flipped with ``write_ber``;
* or, in ``patterned`` mode, a fixed set of faulty bit positions that read back
  flipped on every access (recurring error pattern).

Randomness comes from numpy's PCG64 generator seeded with ``FaultModel.rng_seed``.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .anchors import load_anchors
from .errors import AllocationError, BusError, ConfigError, DomainError

SCM = "SCM"
SRAM = "SRAM"
PRIVATE = "private"
INTERLEAVED = "interleaved"
BANKS = 4
BANK_WORD_BYTES = 4
KB = 1024
L2_BASE = 0x1C000000


@dataclass(frozen=True)
class Region:
    name: str
    base: int
    size: int
    kind: str
    banking: str = PRIVATE

    def __post_init__(self):
        if self.kind not in (SCM, SRAM):
            raise ConfigError(f"region {self.name}: kind must be SCM or SRAM")
        if self.banking not in (PRIVATE, INTERLEAVED):
            raise ConfigError(f"region {self.name}: banking must be private or interleaved")
        if self.size <= 0 or self.base < 0:
            raise ConfigError(f"region {self.name}: invalid base/size")
        if self.banking == INTERLEAVED and self.size % (BANKS * BANK_WORD_BYTES):
            raise ConfigError(f"region {self.name}: interleaved size must be a multiple of 16")

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end


class Span(NamedTuple):
    region: Region
    offset: int  # into the region
    length: int
    pos: int  # into the access buffer


class MemoryMap:
    """Non-overlapping list of regions, looked up by address."""

    def __init__(self, regions: Iterable[Region]):
        self.regions = tuple(sorted(regions, key=lambda r: r.base))
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise ConfigError("region names must be unique")
        for a, b in zip(self.regions, self.regions[1:]):
            if b.base < a.end:
                raise ConfigError(f"regions {a.name} and {b.name} overlap")
        self._bases = [r.base for r in self.regions]

    @classmethod
    def default(cls) -> "MemoryMap":
        return cls([
            Region("private_scm", L2_BASE, 8 * KB, SCM, PRIVATE),
            Region("private_sram", L2_BASE + 8 * KB, 56 * KB, SRAM, PRIVATE),
            Region("interleaved_sram", L2_BASE + 64 * KB, BANKS * 112 * KB, SRAM, INTERLEAVED),
            Region("interleaved_scm", L2_BASE + 512 * KB, BANKS * 2 * KB, SCM, INTERLEAVED),
        ])

    @classmethod
    def from_config(cls, entries: list[Mapping]) -> "MemoryMap":
        try:
            regions = [Region(str(e["name"]), int(e["base"], 0) if isinstance(e["base"], str) else int(e["base"]),
                              int(e["size"]), str(e["kind"]).upper(), str(e.get("banking", PRIVATE)))
                       for e in entries]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad memory map entry: {exc}") from None
        return cls(regions)

    def to_config(self) -> list[dict]:
        return [{"name": r.name, "base": hex(r.base), "size": r.size, "kind": r.kind, "banking": r.banking}
                for r in self.regions]

    def __getitem__(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def region_at(self, addr: int) -> Region:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0 and self.regions[i].contains(addr):
            return self.regions[i]
        raise BusError(f"unmapped address {addr:#x}")

    def spans(self, addr: int, length: int) -> list[Span]:
        if length < 0:
            raise BusError("negative access length")
        out = []
        pos = 0
        while pos < length:
            r = self.region_at(addr + pos)
            off = addr + pos - r.base
            n = min(length - pos, r.size - off)
            out.append(Span(r, off, n, pos))
            pos += n
        return out

    def total(self, kind: str, banking: str | None = None) -> int:
        return sum(r.size for r in self.regions
                   if r.kind == kind and (banking is None or r.banking == banking))


def bank_of(addr: int, mmap: MemoryMap | None = None) -> int:
    """Bank serving ``addr``: 32-bit words are dealt round-robin over 4 banks."""
    r = (mmap or _default_map()).region_at(addr)
    if r.banking != INTERLEAVED:
        raise DomainError(f"address {addr:#x} is in non-interleaved region {r.name}")
    return ((addr - r.base) // BANK_WORD_BYTES) % BANKS


def banks_touched(addr: int, length: int, mmap: MemoryMap | None = None) -> list[int]:
    """Bank index of every 32-bit word covered by an access, in address order."""
    first = addr - addr % BANK_WORD_BYTES
    return [bank_of(a, mmap) for a in range(first, addr + length, BANK_WORD_BYTES)]


@lru_cache(maxsize=1)
def _default_map() -> MemoryMap:
    return MemoryMap.default()


@dataclass(frozen=True)
class FaultModel:
    read_ber: float = 0.0
    write_ber: float = 0.0
    mode: str = "uniform"
    stuck_density: float = 0.0
    # absolute bit addresses (byte_address * 8 + bit) of faulty cells
    stuck_bits: tuple[int, ...] = ()
    rng_seed: int = 0
    region_read_ber: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("read_ber", "write_ber", "stuck_density"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise DomainError(f"{name}={p} is not a probability")
        for name, p in self.region_read_ber.items():
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"read BER override for {name}={p} is not a probability")
        if self.mode not in ("uniform", "patterned"):
            raise ConfigError(f"unknown fault mode {self.mode!r}")
        object.__setattr__(self, "stuck_bits", tuple(int(b) for b in self.stuck_bits))


class TraceRecord(NamedTuple):
    seq: int
    op: str
    address: int
    size: int
    region: str
    kind: str
    flipped_bits: int


class MemoryModel:
    """Byte-addressable store over a :class:`MemoryMap` with fault injection.

    Single-threaded: owns a mutable store and an RNG stream.
    """

    def __init__(self, mmap: MemoryMap | None = None, faults: FaultModel | None = None,
                 trace: bool = False):
        self.map = mmap or MemoryMap.default()
        self.faults = faults or FaultModel()
        self._rng = np.random.Generator(np.random.PCG64(self.faults.rng_seed))
        self._store = {r.name: np.zeros(r.size, dtype=np.uint8) for r in self.map.regions}
        self._stuck = self._build_pattern() if self.faults.mode == "patterned" else {}
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.reads = self.writes = 0
        self.bits_read = self.bits_written = 0
        self.read_flips = self.write_flips = 0
        self.sram_bits_read = 0

    def _build_pattern(self) -> dict[str, np.ndarray]:
        per_region: dict[str, list[int]] = {r.name: [] for r in self.map.regions if r.kind == SRAM}
        for bit in self.faults.stuck_bits:
            r = self.map.region_at(bit // 8)
            if r.kind == SRAM:
                per_region[r.name].append(bit - r.base * 8)
        d = self.faults.stuck_density
        for r in self.map.regions:
            if r.kind != SRAM or d == 0.0:
                continue
            nbits = r.size * 8
            k = int(self._rng.binomial(nbits, d))
            per_region[r.name].extend(self._rng.choice(nbits, size=k, replace=False).tolist())
        return {name: np.unique(np.asarray(v, dtype=np.int64)) for name, v in per_region.items()}

    def read_ber_for(self, region: Region) -> float:
        if region.kind == SCM:
            return 0.0
        return self.faults.region_read_ber.get(region.name, self.faults.read_ber)

    def _flip_random(self, buf: np.ndarray, p: float) -> int:
        nbits = buf.size * 8
        if p <= 0.0 or nbits == 0:
            return 0
        if p >= 1.0:
            np.invert(buf, out=buf)
            return nbits
        if p == 0.5:
            # uniform random bytes are exactly Bernoulli(1/2) per bit
            noise = self._rng.integers(0, 256, size=buf.size, dtype=np.uint8)
            buf ^= noise
            return int(np.bitwise_count(noise).sum())
        if nbits * p < 8:
            # sparse: exact flip count first, usually zero
            k = int(self._rng.binomial(nbits, p))
            if not k:
                return 0
            pos = self._rng.choice(nbits, size=k, replace=False)
        else:
            pos = self._bernoulli_positions(nbits, p)
        if pos.size > nbits // 64:
            hits = np.zeros(nbits, dtype=bool)
            hits[pos] = True
            buf ^= np.packbits(hits, bitorder="little")
        elif pos.size:
            np.bitwise_xor.at(buf, pos >> 3, np.left_shift(1, pos & 7).astype(np.uint8))
        return int(pos.size)

    def _bernoulli_positions(self, nbits: int, p: float) -> np.ndarray:
        """Indices of successes in ``nbits`` independent Bernoulli(p) trials.

        Gaps between successes are geometric, so the cost scales with the number
        of flips rather than with ``nbits``.
        """
        mean = nbits * p
        draw = int(mean + 6 * math.sqrt(mean) + 16)
        pos = np.cumsum(self._rng.geometric(p, size=draw)) - 1
        while pos[-1] < nbits:
            more = np.cumsum(self._rng.geometric(p, size=draw)) + pos[-1]
            pos = np.concatenate([pos, more])
        return pos[:np.searchsorted(pos, nbits)]

    def _flip_pattern(self, buf: np.ndarray, region: Region, offset: int) -> int:
        stuck = self._stuck.get(region.name)
        if stuck is None or stuck.size == 0:
            return 0
        lo = np.searchsorted(stuck, offset * 8)
        hi = np.searchsorted(stuck, (offset + buf.size) * 8)
        pos = stuck[lo:hi] - offset * 8
        if pos.size:
            np.bitwise_xor.at(buf, pos >> 3, np.left_shift(1, pos & 7).astype(np.uint8))
        return int(pos.size)

    def _log(self, op: str, addr: int, size: int, spans: list[Span], flips: int) -> None:
        if self.trace is None:
            return
        names = "+".join(s.region.name for s in spans)
        kinds = "+".join(sorted({s.region.kind for s in spans}))
        self.trace.append(TraceRecord(len(self.trace), op, addr, size, names, kinds, flips))

    def read(self, addr: int, length: int) -> np.ndarray:
        """Return ``length`` bytes at ``addr`` as a fresh uint8 array, with read faults."""
        spans = self.map.spans(addr, length)
        out = np.empty(length, dtype=np.uint8)
        flips = 0
        for s in spans:
            chunk = out[s.pos:s.pos + s.length]
            chunk[:] = self._store[s.region.name][s.offset:s.offset + s.length]
            if s.region.kind != SRAM:
                continue
            self.sram_bits_read += s.length * 8
            if self.faults.mode == "patterned":
                flips += self._flip_pattern(chunk, s.region, s.offset)
            else:
                flips += self._flip_random(chunk, self.read_ber_for(s.region))
        self.reads += 1
        self.bits_read += length * 8
        self.read_flips += flips
        self._log("R", addr, length, spans, flips)
        return out

    def write(self, addr: int, data) -> None:
        """Store bytes at ``addr``; SRAM spans may be stored corrupted (persistent)."""
        if isinstance(data, np.ndarray):
            buf = np.ascontiguousarray(data).view(np.uint8).reshape(-1).copy()
        else:
            buf = np.frombuffer(bytes(data), dtype=np.uint8).copy()
        spans = self.map.spans(addr, buf.size)
        flips = 0
        for s in spans:
            chunk = buf[s.pos:s.pos + s.length]
            if s.region.kind == SRAM:
                flips += self._flip_random(chunk, self.faults.write_ber)
            self._store[s.region.name][s.offset:s.offset + s.length] = chunk
        self.writes += 1
        self.bits_written += buf.size * 8
        self.write_flips += flips
        self._log("W", addr, buf.size, spans, flips)

    def peek(self, addr: int, length: int) -> np.ndarray:
        """Stored contents without read faults or tracing (debug access)."""
        out = np.empty(length, dtype=np.uint8)
        for s in self.map.spans(addr, length):
            out[s.pos:s.pos + s.length] = self._store[s.region.name][s.offset:s.offset + s.length]
        return out

    def write_trace_csv(self, path) -> None:
        if self.trace is None:
            raise ConfigError("tracing was not enabled on this memory model")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["seq", "op", "address", "size", "region", "kind", "flipped_bits"])
            for t in self.trace:
                w.writerow([t.seq, t.op, f"{t.address:#010x}", t.size, t.region, t.kind, t.flipped_bits])


ROLES = ("weights", "thresholds", "input_features", "output_features", "instructions")


@dataclass(frozen=True)
class AllocationPolicy:
    """Which memory kind holds each data role."""

    name: str
    kinds: Mapping[str, str]

    def __post_init__(self):
        missing = set(ROLES) - set(self.kinds)
        if missing:
            raise ConfigError(f"policy {self.name} lacks roles {sorted(missing)}")
        for role in ("thresholds", "instructions"):
            if self.kinds[role] != SCM:
                raise ConfigError(f"policy {self.name}: {role} must live in SCM")


SRAM_EXEC = AllocationPolicy("sram-exec", {
    "weights": SRAM, "thresholds": SCM, "input_features": SRAM,
    "output_features": SRAM, "instructions": SCM,
})
SCM_EXEC = AllocationPolicy("scm-exec", {role: SCM for role in ROLES})
POLICIES = {p.name: p for p in (SRAM_EXEC, SCM_EXEC)}


class AddressRange(NamedTuple):
    start: int
    end: int
    region: str

    @property
    def size(self) -> int:
        return self.end - self.start


class Allocator:
    """Bump-pointer allocator, one pointer per region.

    Instructions prefer private regions (the core's own ports); data roles
    prefer interleaved regions (reachable by the accelerator at full width).
    """

    def __init__(self, mmap: MemoryMap, align: int = 16):
        self.map = mmap
        self.align = align
        self._next = {r.name: r.base for r in mmap.regions}

    def free(self, region: str) -> int:
        r = self.map[region]
        return r.end - self._next[region]

    def allocate(self, policy: AllocationPolicy, role: str, size: int) -> AddressRange:
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}")
        kind = policy.kinds[role]
        first = PRIVATE if role == "instructions" else INTERLEAVED
        candidates = sorted((r for r in self.map.regions if r.kind == kind),
                            key=lambda r: r.banking != first)
        for r in candidates:
            start = -(-self._next[r.name] // self.align) * self.align
            if start + size <= r.end:
                self._next[r.name] = start + size
                return AddressRange(start, start + size, r.name)
        raise AllocationError(
            f"cannot place {size} bytes of {role} in {kind} under policy {policy.name}")


@lru_cache(maxsize=None)
def _ber_anchors(path: str | None):
    pts = load_anchors(path)
    return np.array([p.v for p in pts]), np.array([p.ber for p in pts])


def ber_from_voltage(v: float, floor: bool = False, threshold_v: float = 0.6,
                     anchors: str | None = None) -> float:
    """SRAM bit error probability at supply ``v`` (log-linear between anchors).

    With ``floor`` set, voltages above ``threshold_v`` report 0: no error is
    observable there within a realistic test budget.
    """
    vs, bers = _ber_anchors(anchors)
    eps = 1e-9
    if not vs[0] - eps <= v <= vs[-1] + eps:
        raise DomainError(f"voltage {v} V outside [{vs[0]}, {vs[-1]}] V")
    if floor and v > threshold_v + eps:
        return 0.0
    hit = np.flatnonzero(np.abs(vs - v) <= eps)
    if hit.size:
        return float(bers[hit[0]])
    return float(np.exp(np.interp(v, vs, np.log(bers))))
