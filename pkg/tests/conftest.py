import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bnnsim.bintensor import unpack, unpack_weights

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def reference_popcounts(x, layer):
    """Independent integer reference: raw accumulator values (C_out, H_out, W_out).

    Works on unpacked ±1 values.  A matching bit adds 1, so a valid tap contributes
    (dot + C) / 2; taps in the padding border contribute nothing.
    """
    v = unpack(x).astype(np.int64)
    w = unpack_weights(layer).astype(np.int64)
    if layer.kind == "linear":
        # position-major, channel-minor flattening
        v = v.transpose(1, 2, 0).reshape(-1, 1, 1)
    c, h, wd = v.shape
    s, p = layer.stride, layer.padding
    ho = (h + 2 * p - layer.kernel_h) // s + 1
    wo = (wd + 2 * p - layer.kernel_w) // s + 1
    out = np.zeros((layer.out_channels, ho, wo), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            for ky in range(layer.kernel_h):
                for kx in range(layer.kernel_w):
                    iy, ix = oy * s - p + ky, ox * s - p + kx
                    if 0 <= iy < h and 0 <= ix < wd:
                        out[:, oy, ox] += (w[:, :, ky, kx] @ v[:, iy, ix] + c) // 2
    return out


def reference_binarize(raw, layer):
    bits = raw >= (layer.thresholds.astype(np.int64) << layer.shift)[:, None, None]
    if layer.pool == "max2x2":
        c, h, w = bits.shape
        bits = bits[:, :h // 2 * 2, :w // 2 * 2].reshape(c, h // 2, 2, w // 2, 2).any(axis=(2, 4))
    return np.where(bits, 1, -1).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
