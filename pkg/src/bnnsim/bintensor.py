"""Bit-packed binary tensors and an integer reference model of BNN layers.

Encoding: a bit value of 1 stands for +1 and 0 for -1.  All channel bits of a
spatial position are packed into ``ceil(C / 128)`` 128-bit words before moving
on to the next position (row-major over H, W).  A 128-bit word is stored as 16
little-endian bytes, so channel ``c`` of group ``g`` lives in byte
``(c % 128) // 8``, bit ``c % 8``.  Unused channel bits of the last word are
always zero.

The reference model here is deliberately independent of the accelerator model
in :mod:`bnnsim.xne`; it works on whole tensors with numpy and never touches
simulated memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError

WORD_BITS = 128
WORD_BYTES = 16
ACC_BITS = 16
ACC_LIMIT = 1 << ACC_BITS
MAX_SHIFT = 8

CONV = "conv"
LINEAR = "linear"
POOL_NONE = "none"
POOL_MAX2 = "max2x2"


def word_groups(channels: int) -> int:
    """Number of 128-bit words needed for ``channels`` bits."""
    return -(-channels // WORD_BITS)


def channel_mask(channels: int) -> np.ndarray:
    """Byte mask of shape (groups, 16) selecting the valid channel bits."""
    g = word_groups(channels)
    bits = np.zeros(g * WORD_BITS, dtype=np.uint8)
    bits[:channels] = 1
    return np.packbits(bits, bitorder="little").reshape(g, WORD_BYTES)


def int_to_word(value: int) -> np.ndarray:
    return np.frombuffer(int(value).to_bytes(WORD_BYTES, "little"), dtype=np.uint8).copy()


def word_to_int(word: np.ndarray) -> int:
    return int.from_bytes(np.asarray(word, dtype=np.uint8).tobytes(), "little")


def as_words(words) -> np.ndarray:
    """Coerce a sequence of 128-bit ints or a uint8 array into shape (n, 16)."""
    if isinstance(words, np.ndarray) and words.dtype == np.uint8:
        if words.size % WORD_BYTES:
            raise ShapeError(f"byte array of size {words.size} is not a whole number of words")
        return words.reshape(-1, WORD_BYTES)
    seq = list(words)
    if not seq:
        return np.zeros((0, WORD_BYTES), dtype=np.uint8)
    return np.stack([int_to_word(w) for w in seq])


def _pack_hwc(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean (H, W, C) array into (H*W*G, 16) words."""
    h, w, c = bits.shape
    g = word_groups(c)
    padded = np.zeros((h, w, g * WORD_BITS), dtype=np.uint8)
    padded[:, :, :c] = bits
    return np.packbits(padded, axis=-1, bitorder="little").reshape(h * w * g, WORD_BYTES)


@dataclass(frozen=True, eq=False)
class BinaryTensor:
    """Immutable {-1, +1} tensor of shape (channels, height, width)."""

    channels: int
    height: int
    width: int
    words: np.ndarray = field(repr=False)

    def __post_init__(self):
        if min(self.channels, self.height, self.width) < 1:
            raise ShapeError(f"invalid tensor shape {self.shape}")
        words = np.array(self.words, dtype=np.uint8).reshape(-1, WORD_BYTES)
        expected = self.groups * self.height * self.width
        if words.shape[0] != expected:
            raise ShapeError(f"expected {expected} words for shape {self.shape}, got {words.shape[0]}")
        pad = ~channel_mask(self.channels)
        if np.any(words.reshape(-1, self.groups, WORD_BYTES) & pad):
            raise ShapeError("padding bits beyond the channel count must be zero")
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def groups(self) -> int:
        return word_groups(self.channels)

    @property
    def nbytes(self) -> int:
        return self.words.size

    def word(self, index: int) -> int:
        return word_to_int(self.words[index])

    def word_ints(self) -> list[int]:
        return [word_to_int(w) for w in self.words]

    def pixel_words(self, y: int, x: int) -> np.ndarray:
        g = self.groups
        i = (y * self.width + x) * g
        return self.words[i:i + g]

    def to_bytes(self) -> bytes:
        return self.words.tobytes()

    @classmethod
    def from_bytes(cls, data, shape: Sequence[int]) -> "BinaryTensor":
        c, h, w = shape
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
        return cls(c, h, w, arr)

    def flatten(self) -> "BinaryTensor":
        """Reinterpret as a (C*H*W, 1, 1) vector in position-major, channel-minor order.

        Only free (no repacking) when every position fills whole words.
        """
        if self.height * self.width == 1:
            return self
        if self.channels % WORD_BITS:
            raise ShapeError(
                f"cannot flatten {self.shape}: channel count must be a multiple of {WORD_BITS}")
        return BinaryTensor(self.channels * self.height * self.width, 1, 1, self.words)

    def __eq__(self, other):
        if not isinstance(other, BinaryTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.words, other.words)

    __hash__ = None


def pack(values, channels: int, height: int = 1, width: int = 1) -> BinaryTensor:
    """Pack ±1 values given in (C, H, W) order."""
    arr = np.asarray(values)
    if arr.size != channels * height * width:
        raise ShapeError(
            f"got {arr.size} values for shape ({channels}, {height}, {width})")
    arr = arr.reshape(channels, height, width)
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("values must all be -1 or +1")
    bits = (arr == 1).transpose(1, 2, 0)
    return BinaryTensor(channels, height, width, _pack_hwc(bits))


def unpack(t: BinaryTensor) -> np.ndarray:
    """Inverse of :func:`pack`; returns an int8 array of shape (C, H, W)."""
    g = t.groups
    raw = t.words.reshape(t.height, t.width, g * WORD_BYTES)
    bits = np.unpackbits(raw, axis=-1, bitorder="little")[:, :, :t.channels]
    return (bits.transpose(2, 0, 1).astype(np.int8) * 2 - 1)


def binary_dot(a, b, n: int) -> int:
    """±1 dot product of the first ``n`` bits: ``2 * popcount(XNOR) - n``."""
    wa, wb = as_words(a), as_words(b)
    if wa.shape != wb.shape:
        raise ShapeError(f"operand word counts differ: {wa.shape[0]} vs {wb.shape[0]}")
    if not 0 <= n <= wa.shape[0] * WORD_BITS:
        raise ShapeError(f"{n} bits do not fit in {wa.shape[0]} words")
    mask = channel_mask(n) if n else np.zeros((0, WORD_BYTES), np.uint8)
    pad = np.zeros((wa.shape[0] - mask.shape[0], WORD_BYTES), np.uint8)
    mask = np.concatenate([mask, pad])
    matches = int(np.bitwise_count(~(wa ^ wb) & mask).sum())
    return 2 * matches - n


def pack_weights(w) -> np.ndarray:
    """Pack ±1 weights into the canonical (out, kh, kw, groups, 16) layout.

    ``w`` is (out, in, kh, kw) for convolutions or (out, in) for linear layers.
    """
    arr = np.asarray(w)
    if arr.ndim == 2:
        arr = arr[:, :, None, None]
    if arr.ndim != 4:
        raise ShapeError(f"weights must be 2-D or 4-D, got shape {arr.shape}")
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("weights must all be -1 or +1")
    o, c, kh, kw = arr.shape
    g = word_groups(c)
    bits = np.zeros((o, kh, kw, g * WORD_BITS), dtype=np.uint8)
    bits[..., :c] = (arr == 1).transpose(0, 2, 3, 1)
    return np.packbits(bits, axis=-1, bitorder="little").reshape(o, kh, kw, g, WORD_BYTES)


def unpack_weights(layer: "LayerSpec") -> np.ndarray:
    """±1 weights as (out, in, kh, kw)."""
    bits = np.unpackbits(layer.weights, axis=-1, bitorder="little")
    o, kh, kw = layer.weights.shape[:3]
    bits = bits.reshape(o, kh, kw, -1)[..., :layer.in_channels]
    return bits.transpose(0, 3, 1, 2).astype(np.int8) * 2 - 1


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One binary convolution or fully connected layer.

    For ``linear`` layers ``in_channels`` is the flattened feature count and the
    kernel is 1x1.  Thresholds are unsigned 8-bit values compared, after a left
    shift by ``shift``, against the raw popcount accumulator (``>=`` gives +1).
    """

    kind: str
    in_channels: int
    out_channels: int
    thresholds: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    kernel_h: int = 1
    kernel_w: int = 1
    stride: int = 1
    padding: int = 0
    shift: int = 0
    pool: str = POOL_NONE

    def __post_init__(self):
        if self.kind not in (CONV, LINEAR):
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.pool not in (POOL_NONE, POOL_MAX2):
            raise ShapeError(f"unknown pooling {self.pool!r}")
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1:
            raise ShapeError("channel counts, kernel and stride must be positive")
        if self.padding < 0:
            raise ShapeError("padding must be non-negative")
        if self.kind == LINEAR and (self.kernel_h, self.kernel_w, self.stride, self.padding) != (1, 1, 1, 0):
            raise ShapeError("linear layers use a 1x1 kernel, stride 1 and no padding")
        if not 0 <= self.shift <= MAX_SHIFT:
            raise ShapeError(f"threshold shift {self.shift} exceeds {MAX_SHIFT} (16-bit overflow)")
        thr = np.asarray(self.thresholds)
        if thr.shape != (self.out_channels,):
            raise ShapeError(f"expected {self.out_channels} thresholds, got shape {thr.shape}")
        if np.any(thr < 0) or np.any(thr > 255):
            raise ShapeError("thresholds must be 8-bit unsigned values")
        thr = thr.astype(np.uint8)
        thr.flags.writeable = False
        object.__setattr__(self, "thresholds", thr)
        w = np.array(self.weights, dtype=np.uint8)
        expect = (self.out_channels, self.kernel_h, self.kernel_w, word_groups(self.in_channels), WORD_BYTES)
        if w.shape != expect:
            raise ShapeError(f"weights shape {w.shape} != {expect}")
        if np.any(w & ~channel_mask(self.in_channels)):
            raise ShapeError("weight padding bits must be zero")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def in_groups(self) -> int:
        return word_groups(self.in_channels)

    @property
    def out_groups(self) -> int:
        return word_groups(self.out_channels)

    @property
    def inner_steps(self) -> int:
        """Accumulation steps (128-bit words) per output value."""
        return self.kernel_h * self.kernel_w * self.in_groups

    @property
    def shifted_thresholds(self) -> np.ndarray:
        return self.thresholds.astype(np.int64) << self.shift

    @property
    def weight_bytes(self) -> int:
        return self.weights.size

    def check_accumulator(self) -> None:
        if WORD_BITS * self.inner_steps >= ACC_LIMIT:
            raise ShapeError(
                f"{self.inner_steps} accumulation steps can overflow the {ACC_BITS}-bit accumulators")

    def conv_shape(self, in_shape: Sequence[int]) -> tuple[int, int, int]:
        """Shape before pooling."""
        c, h, w = in_shape
        if self.kind == LINEAR:
            if c * h * w != self.in_channels:
                raise ShapeError(f"linear layer expects {self.in_channels} features, got {c}x{h}x{w}")
            if h * w > 1 and c % WORD_BITS:
                raise ShapeError("linear layer after a spatial tensor needs channels in multiples of 128")
            return (self.out_channels, 1, 1)
        if c != self.in_channels:
            raise ShapeError(f"conv layer expects {self.in_channels} channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {self.kernel_h}x{self.kernel_w} does not fit input {h}x{w}")
        return (self.out_channels, ho, wo)

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, int, int]:
        c, h, w = self.conv_shape(in_shape)
        if self.pool == POOL_MAX2:
            if h < 2 or w < 2:
                raise ShapeError("2x2 pooling needs at least a 2x2 map")
            return (c, h // 2, w // 2)
        return (c, h, w)

    def macs(self, in_shape: Sequence[int]) -> int:
        _, h, w = self.conv_shape(in_shape)
        return self.out_channels * h * w * self.in_channels * self.kernel_h * self.kernel_w


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Ordered layers; the last one is a linear classifier with raw outputs."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    class_count: int
    ops_per_inference: float | None = None
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if not self.layers:
            raise ShapeError("network has no layers")
        last = self.layers[-1]
        if last.kind != LINEAR or last.pool != POOL_NONE:
            raise ShapeError("the final layer must be an unpooled linear classifier")
        if last.out_channels != self.class_count:
            raise ShapeError(f"final layer has {last.out_channels} outputs for {self.class_count} classes")
        self.shapes()

    def shapes(self) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
        """(input shape, output shape) of every layer."""
        out = []
        shape = self.input_shape
        for layer in self.layers:
            nxt = layer.output_shape(shape)
            out.append((shape, nxt))
            shape = nxt
        return out

    def binary_ops(self) -> int:
        """XNOR plus accumulate counted as two operations per weight bit use."""
        return 2 * sum(layer.macs(s_in) for layer, (s_in, _) in zip(self.layers, self.shapes()))

    def footprint(self) -> dict[str, int]:
        """Bytes of packed weights, thresholds and stored activations.

        ``raw_*`` entries give the same quantities without word padding.
        Activations are the input plus every binarized layer output; the final
        classifier's raw sums stay inside the accelerator.
        """
        weights = sum(layer.weight_bytes for layer in self.layers)
        raw_weights = sum(
            layer.out_channels * layer.in_channels * layer.kernel_h * layer.kernel_w
            for layer in self.layers) / 8
        thresholds = sum(layer.out_channels for layer in self.layers[:-1])
        tensors = [self.input_shape] + [s_out for _, s_out in self.shapes()[:-1]]
        acts = sum(word_groups(c) * WORD_BYTES * h * w for c, h, w in tensors)
        raw_acts = sum(c * h * w for c, h, w in tensors) / 8
        return {
            "weights": weights,
            "activations": acts,
            "thresholds": thresholds,
            "total": weights + acts,
            "raw_weights": int(raw_weights),
            "raw_activations": int(raw_acts),
            "raw_total": int(raw_weights + raw_acts),
        }


def _accumulate(x: BinaryTensor, layer: LayerSpec) -> np.ndarray:
    """Raw popcount sums as an int64 (H_out, W_out, C_out) array, before pooling."""
    if layer.kind == LINEAR:
        layer.conv_shape(x.shape)
        x = x.flatten()
    _, ho, wo = layer.conv_shape(x.shape)
    h, w, g = x.height, x.width, x.groups
    xw = x.words.reshape(h, w, g, WORD_BYTES)
    mask = channel_mask(x.channels)
    acc = np.zeros((ho, wo, layer.out_channels), dtype=np.int64)
    oy, ox = np.arange(ho), np.arange(wo)
    for ky in range(layer.kernel_h):
        iy = oy * layer.stride - layer.padding + ky
        vy = (iy >= 0) & (iy < h)
        if not vy.any():
            continue
        for kx in range(layer.kernel_w):
            ix = ox * layer.stride - layer.padding + kx
            vx = (ix >= 0) & (ix < w)
            if not vx.any():
                continue
            win = xw[iy[vy]][:, ix[vx]]
            wk = layer.weights[:, ky, kx]
            xnor = ~(win[:, :, None] ^ wk[None, None]) & mask
            acc[np.ix_(oy[vy], ox[vx])] += np.bitwise_count(xnor).sum(axis=(-1, -2), dtype=np.int64)
    return acc


def oracle_layer(x: BinaryTensor, layer: LayerSpec, binarize: bool = True):
    """Reference evaluation of one layer.

    Returns a :class:`BinaryTensor` when ``binarize`` is true, otherwise the raw
    popcount sums as an int64 array of shape (C_out, H_out, W_out).  Kernel taps
    falling into the zero-padding border contribute nothing.
    """
    layer.check_accumulator()
    acc = _accumulate(x, layer)
    if not binarize:
        if layer.pool != POOL_NONE:
            raise ShapeError("raw outputs are not defined for pooled layers")
        return acc.transpose(2, 0, 1)
    bits = acc >= layer.shifted_thresholds
    if layer.pool == POOL_MAX2:
        ho, wo = bits.shape[0] // 2, bits.shape[1] // 2
        bits = bits[:2 * ho, :2 * wo].reshape(ho, 2, wo, 2, -1).any(axis=(1, 3))
    c = layer.out_channels
    return BinaryTensor(c, bits.shape[0], bits.shape[1], _pack_hwc(bits))


def oracle_network(net: NetworkSpec, x: BinaryTensor) -> np.ndarray:
    """Class scores (raw popcount sums of the classifier) for one input."""
    if x.shape != net.input_shape:
        raise ShapeError(f"input shape {x.shape} != network input {net.input_shape}")
    for layer in net.layers[:-1]:
        x = oracle_layer(x, layer)
    return oracle_layer(x, net.layers[-1], binarize=False).reshape(-1)


def random_layer(rng: np.random.Generator, **kwargs) -> LayerSpec:
    """Layer with uniformly random weights and thresholds (for tests and sizing)."""
    kind = kwargs.get("kind", CONV)
    cin, cout = kwargs["in_channels"], kwargs["out_channels"]
    kh, kw = kwargs.get("kernel_h", 1), kwargs.get("kernel_w", 1)
    w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(cout, cin, kh, kw))
    kwargs.setdefault("thresholds", rng.integers(0, 256, size=cout))
    return LayerSpec(weights=pack_weights(w), **kwargs)


def random_tensor(rng: np.random.Generator, shape: Sequence[int]) -> BinaryTensor:
    c, h, w = shape
    return pack(rng.choice(np.array([-1, 1], dtype=np.int8), size=(c, h, w)), c, h, w)
