import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnnsim.errors import InvalidStateError, ShapeError
from bnnsim.memsim import KB, FaultModel, MemoryMap, MemoryModel, Region
from bnnsim.selftest import BerEstimate, Lfsr32, derive_seed, lfsr_next, run_selftest

# first eight words from seed 1, computed with a list-of-bits shift register
# (feedback = r[31] ^ r[21] ^ r[1] ^ r[0], 32 shifts per word)
SEED1_WORDS = [0xB6DB68A3, 0xCF213212, 0xB93A9645, 0xC28201D2,
               0x63B1D6A6, 0x308F085D, 0xBD532556, 0x4105FDC3]


def bit_serial(seed, n):
    r = [(seed >> k) & 1 for k in range(32)]
    out = []
    for _ in range(n):
        for _ in range(32):
            r = [r[31] ^ r[21] ^ r[1] ^ r[0]] + r[:31]
        out.append(sum(b << k for k, b in enumerate(r)))
    return out


def test_seed_one_sequence():
    lfsr = Lfsr32(1)
    assert [lfsr_next(lfsr) for _ in range(8)] == SEED1_WORDS


@given(st.integers(1, 2**32 - 1))
def test_matches_bit_serial_reference(seed):
    assert [Lfsr32(seed).next() for _ in range(1)] == bit_serial(seed, 1)
    l = Lfsr32(seed)
    assert [l.next() for _ in range(3)] == bit_serial(seed, 3)


@given(st.integers(1, 2**32 - 1), st.integers(0, 3000))
def test_bulk_words_equal_stepwise(seed, n):
    a, b = Lfsr32(seed), Lfsr32(seed)
    bulk = a.words(n)
    assert bulk.tolist() == [b.next() for _ in range(n)]
    assert a.state == b.state


def test_step_and_next_agree():
    a, b = Lfsr32(0xDEADBEEF), Lfsr32(0xDEADBEEF)
    for _ in range(32):
        a.step()
    assert a.state == b.next()


def test_zero_state_rejected():
    with pytest.raises(InvalidStateError):
        Lfsr32(0)
    with pytest.raises(InvalidStateError):
        Lfsr32(2**32)  # truncates to zero


def test_determinism_and_no_zero_state():
    words = Lfsr32(12345).words(10**6)
    assert np.array_equal(words, Lfsr32(12345).words(10**6))
    assert np.all(words != 0)


def _polymulmod(a, b, mod, deg):
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> deg & 1:
            a ^= mod
    return r


def _xpow(e, mod, deg):
    result, base = 1, 2
    while e:
        if e & 1:
            result = _polymulmod(result, base, mod, deg)
        base = _polymulmod(base, base, mod, deg)
        e >>= 1
    return result


def test_feedback_polynomial_is_primitive():
    # x^32 + x^22 + x^2 + x + 1 has order 2^32 - 1, so the period is maximal
    poly = (1 << 32) | (1 << 22) | (1 << 2) | (1 << 1) | 1
    order = 2**32 - 1
    assert _xpow(order, poly, 32) == 1
    for q in (3, 5, 17, 257, 65537):  # prime factors of 2^32 - 1
        assert _xpow(order // q, poly, 32) != 1
    assert 3 * 5 * 17 * 257 * 65537 == order


def test_derive_seed():
    seeds = [derive_seed(7, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert all(0 < s < 2**32 for s in seeds)
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(8, 3)


def test_ber_estimate_formatting():
    e = BerEstimate(8 * 10**8, 0)
    assert e.rate == 0.0
    assert e.floor == pytest.approx(1.25e-9)
    assert e.format() == "< 1.25e-09"
    assert BerEstimate(1000, 1).format() == "0.001"


def test_clean_memory_has_no_errors():
    mem = MemoryModel()
    est = run_selftest(mem, "interleaved_sram", iterations=3, seed0=1)
    assert est.bit_errors == 0
    assert est.bits_observed == 448 * KB * 8 * 3


@pytest.mark.slow
def test_full_campaign_floor():
    # 448 kB x 1800 iterations
    est = run_selftest(MemoryModel(), "interleaved_sram", iterations=1800, seed0=3)
    assert est.bits_observed == 448 * 1024 * 8 * 1800 == 6_606_028_800
    assert est.bit_errors == 0
    assert est.floor == pytest.approx(1.5138e-10, rel=1e-3)
    assert est.format().startswith("< 1.51e-10")


def test_scm_region_is_error_free():
    mem = MemoryModel(faults=FaultModel(read_ber=0.3, write_ber=0.3))
    assert run_selftest(mem, "interleaved_scm", 5, 1).bit_errors == 0


def test_estimate_close_to_injected_rate():
    mem = MemoryModel(faults=FaultModel(read_ber=1e-3, rng_seed=11))
    est = run_selftest(mem, "interleaved_sram", 3, seed0=5)
    assert est.bits_observed >= 10**7
    assert est.rate == pytest.approx(1e-3, rel=0.05)


def test_write_faults_are_counted():
    mem = MemoryModel(faults=FaultModel(write_ber=1e-2, rng_seed=2))
    est = run_selftest(mem, "private_sram", 20, seed0=5)
    sigma = math.sqrt(est.bits_observed * 1e-2)
    assert abs(est.bit_errors - est.bits_observed * 1e-2) < 6 * sigma


def test_consecutive_iterations_write_different_data():
    first = []
    run_selftest(MemoryModel(), "private_sram", 50, seed0=9, first_words=first)
    assert all(a != b for a, b in zip(first, first[1:]))


def test_region_too_small():
    mmap = MemoryMap([Region("tiny", 0x1000, 3, "SRAM", "private")])
    with pytest.raises(ShapeError):
        run_selftest(MemoryModel(mmap), "tiny")
    with pytest.raises(ValueError):
        run_selftest(MemoryModel(), "private_sram", iterations=0)


def test_seed_independence():
    rates = []
    for seed0 in range(5):
        mem = MemoryModel(faults=FaultModel(read_ber=1e-3, rng_seed=100 + seed0))
        rates.append(run_selftest(mem, "interleaved_sram", 1, seed0=seed0).rate)
    n = 448 * KB * 8
    sigma = math.sqrt(1e-3 / n)
    assert max(rates) - min(rates) < 6 * math.sqrt(2) * sigma
