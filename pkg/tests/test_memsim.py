import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnnsim.errors import AllocationError, BusError, ConfigError, DomainError
from bnnsim.memsim import (
    KB, L2_BASE, POLICIES, SCM, SCM_EXEC, SRAM, SRAM_EXEC, AllocationPolicy, Allocator,
    FaultModel, MemoryMap, MemoryModel, bank_of, banks_touched, ber_from_voltage,
)

MMAP = MemoryMap.default()
SRAM_ADDR = MMAP["interleaved_sram"].base
SCM_ADDR = MMAP["interleaved_scm"].base


def test_default_map_capacities():
    assert MMAP.total(SRAM, "interleaved") == 448 * KB
    assert MMAP.total(SCM, "interleaved") == 8 * KB
    assert MMAP.total(SRAM) == 504 * KB
    assert MMAP.total(SCM) == 16 * KB
    assert MMAP.regions[0].base == L2_BASE


def test_map_rejects_overlap_and_roundtrips_config():
    cfg = MMAP.to_config()
    assert MemoryMap.from_config(cfg).to_config() == cfg
    with pytest.raises(ConfigError):
        MemoryMap.from_config([{"name": "a", "base": 0, "size": 64, "kind": "SRAM"},
                               {"name": "b", "base": 32, "size": 64, "kind": "SCM"}])
    with pytest.raises(ConfigError):
        MemoryMap.from_config([{"name": "a", "base": "zz", "size": 64, "kind": "SRAM"}])


def test_unmapped_access_is_bus_error():
    mem = MemoryModel()
    with pytest.raises(BusError):
        mem.read(0, 4)
    with pytest.raises(BusError):
        mem.write(L2_BASE + 520 * KB - 2, b"1234")


def test_access_across_region_boundary():
    mem = MemoryModel()
    addr = MMAP["private_sram"].end - 8
    data = np.arange(16, dtype=np.uint8)
    mem.write(addr, data)
    assert np.array_equal(mem.read(addr, 16), data)


def test_bank_mapping():
    assert [bank_of(SRAM_ADDR + 4 * w) for w in (0, 1, 2, 3, 4)] == [0, 1, 2, 3, 0]
    assert sorted(banks_touched(SRAM_ADDR, 16)) == [0, 1, 2, 3]
    with pytest.raises(DomainError):
        bank_of(L2_BASE)


@given(st.integers(0, 448 * KB // 16 - 1))
def test_aligned_16_byte_access_hits_each_bank_once(word):
    assert sorted(banks_touched(SRAM_ADDR + 16 * word, 16)) == [0, 1, 2, 3]


@given(st.binary(min_size=1, max_size=256), st.floats(0, 1), st.floats(0, 1),
       st.sampled_from(["uniform", "patterned"]), st.integers(0, 2**63))
def test_scm_is_never_corrupted(data, rb, wb, mode, seed):
    mem = MemoryModel(faults=FaultModel(read_ber=rb, write_ber=wb, mode=mode, stuck_density=rb,
                                        rng_seed=seed))
    mem.write(SCM_ADDR, data)
    assert mem.read(SCM_ADDR, len(data)).tobytes() == data
    assert mem.read_flips == mem.write_flips == 0


@given(st.binary(min_size=1, max_size=512))
def test_fault_free_roundtrip(data):
    mem = MemoryModel()
    mem.write(SRAM_ADDR + 100, data)
    assert mem.read(SRAM_ADDR + 100, len(data)).tobytes() == data


def test_write_ber_one_stores_complement():
    mem = MemoryModel(faults=FaultModel(write_ber=1.0))
    mem.write(SRAM_ADDR, b"\x0f\xaa")
    assert mem.read(SRAM_ADDR, 2).tobytes() == b"\xf0\x55"


def test_read_faults_are_transient_and_write_faults_persistent():
    mem = MemoryModel(faults=FaultModel(read_ber=0.1, rng_seed=1))
    data = np.zeros(1024, dtype=np.uint8)
    mem.write(SRAM_ADDR, data)
    assert mem.read(SRAM_ADDR, 1024).any()
    assert not mem.peek(SRAM_ADDR, 1024).any()
    mem = MemoryModel(faults=FaultModel(write_ber=0.1, rng_seed=1))
    mem.write(SRAM_ADDR, data)
    stored = mem.peek(SRAM_ADDR, 1024)
    assert stored.any()
    assert np.array_equal(mem.read(SRAM_ADDR, 1024), stored)


def test_patterned_mode_flips_only_stuck_bits():
    bit = (SRAM_ADDR + 100) * 8 + 5
    mem = MemoryModel(faults=FaultModel(mode="patterned", stuck_bits=(bit,)))
    data = np.full(256, 0x11, dtype=np.uint8)
    mem.write(SRAM_ADDR, data)
    for _ in range(3):  # recurs on every read
        got = mem.read(SRAM_ADDR, 256)
        diff = np.flatnonzero(got != data)
        assert diff.tolist() == [100]
        assert got[100] ^ data[100] == 1 << 5


def test_patterned_density_is_fixed_per_model():
    mem = MemoryModel(faults=FaultModel(mode="patterned", stuck_density=1e-3, rng_seed=4))
    a = mem.read(SRAM_ADDR, 4096)
    b = mem.read(SRAM_ADDR, 4096)
    assert np.array_equal(a, b) and a.any()


def test_same_seed_same_flips():
    def flips(seed):
        mem = MemoryModel(faults=FaultModel(read_ber=1e-2, rng_seed=seed))
        return [mem.read(SRAM_ADDR, 512).tobytes() for _ in range(4)]
    assert flips(9) == flips(9)
    assert flips(9) != flips(10)


@pytest.mark.parametrize("p", [1e-2, 1e-3, 0.2, 0.5])
def test_flip_rate_within_six_sigma(p):
    mem = MemoryModel(faults=FaultModel(read_ber=p, rng_seed=77))
    n = 0
    while n < 10**7:
        mem.read(SRAM_ADDR, 64 * KB)
        n += 64 * KB * 8
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(mem.read_flips - n * p) <= 6 * sigma


def test_flip_positions_uniform_over_bits():
    mem = MemoryModel(faults=FaultModel(read_ber=0.01, rng_seed=5))
    counts = np.zeros(8)
    for _ in range(200):
        bits = np.unpackbits(mem.read(SRAM_ADDR, 1024))
        counts += bits.reshape(-1, 8).sum(axis=0)
    expect = 200 * 1024 * 0.01
    assert np.all(np.abs(counts - expect) < 6 * math.sqrt(expect))


def test_region_read_ber_override():
    mem = MemoryModel(faults=FaultModel(read_ber=0.5, region_read_ber={"private_sram": 0.0}))
    addr = MMAP["private_sram"].base
    mem.write(addr, b"\x00" * 64)
    assert not mem.read(addr, 64).any()


def test_fault_model_validation():
    with pytest.raises(DomainError):
        FaultModel(read_ber=1.5)
    with pytest.raises(DomainError):
        FaultModel(write_ber=-0.1)
    with pytest.raises(ConfigError):
        FaultModel(mode="bursty")


def test_trace_records_every_access(tmp_path):
    mem = MemoryModel(trace=True)
    mem.write(SCM_ADDR, b"abcd")
    mem.read(SRAM_ADDR, 16)
    assert [(t.op, t.kind, t.size) for t in mem.trace] == [("W", SCM, 4), ("R", SRAM, 16)]
    mem.write_trace_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "seq,op,address,size,region,kind,flipped_bits"
    assert len(lines) == 3
    with pytest.raises(ConfigError):
        MemoryModel().write_trace_csv(tmp_path / "u.csv")


def test_sram_exec_keeps_thresholds_and_code_in_scm():
    alloc = Allocator(MMAP)
    for role in ("thresholds", "instructions"):
        r = alloc.allocate(SRAM_EXEC, role, 100)
        assert MMAP[r.region].kind == SCM
    for role in ("weights", "input_features", "output_features"):
        r = alloc.allocate(SRAM_EXEC, role, 100)
        assert MMAP[r.region].kind == SRAM


def test_policies_never_put_thresholds_in_sram():
    for p in POLICIES.values():
        assert p.kinds["thresholds"] == SCM and p.kinds["instructions"] == SCM
    with pytest.raises(ConfigError):
        AllocationPolicy("bad", {**SRAM_EXEC.kinds, "thresholds": SRAM})


def test_allocator_alignment_and_capacity():
    alloc = Allocator(MMAP)
    a = alloc.allocate(SRAM_EXEC, "weights", 5)
    b = alloc.allocate(SRAM_EXEC, "weights", 5)
    assert b.start % 16 == 0 and b.start >= a.end
    with pytest.raises(AllocationError):
        Allocator(MMAP).allocate(SCM_EXEC, "weights", 17 * KB)
    # 312 kB of weights fit in interleaved SRAM
    big = Allocator(MMAP).allocate(SRAM_EXEC, "weights", 312 * KB)
    assert big.region == "interleaved_sram"


@given(st.lists(st.tuples(st.sampled_from(["weights", "thresholds", "input_features",
                                            "output_features", "instructions"]),
                          st.integers(1, 3000)), max_size=30))
def test_allocations_never_overlap(requests):
    alloc = Allocator(MMAP)
    got = []
    for role, size in requests:
        try:
            got.append(alloc.allocate(SRAM_EXEC, role, size))
        except AllocationError:
            continue
    got.sort()
    for x, y in zip(got, got[1:]):
        assert x.end <= y.start
    for r in got:
        reg = MMAP[r.region]
        assert reg.base <= r.start and r.end <= reg.end


def test_ber_from_voltage_anchors():
    assert ber_from_voltage(0.42) == 0.001723
    assert ber_from_voltage(0.50) == 6.93e-6
    assert ber_from_voltage(0.46) == pytest.approx(1.09e-4)
    assert ber_from_voltage(0.62, floor=True) == 0.0
    assert ber_from_voltage(0.62) == 1.77e-9
    with pytest.raises(DomainError):
        ber_from_voltage(0.3)
    with pytest.raises(DomainError):
        ber_from_voltage(0.9)


@given(st.floats(0.42, 0.80), st.floats(0.42, 0.80))
def test_ber_decreases_with_voltage(a, b):
    lo, hi = sorted((a, b))
    assert ber_from_voltage(lo) >= ber_from_voltage(hi)


def test_ber_interpolation_is_log_linear():
    mid = ber_from_voltage(0.44)
    assert mid == pytest.approx(math.sqrt(0.001723 * 0.000109))


@pytest.mark.parametrize("size,p", [(16, 1e-2), (256, 1e-3), (2048, 0.3)])
def test_flip_rate_for_small_reads(size, p):
    # covers both the sparse (count-then-place) and gap-sampling paths
    mem = MemoryModel(faults=FaultModel(read_ber=p, rng_seed=8))
    reads = 2 * 10**6 // (size * 8)
    for _ in range(reads):
        mem.read(SRAM_ADDR, size)
    n = reads * size * 8
    assert abs(mem.read_flips - n * p) <= 6 * math.sqrt(n * p * (1 - p))
