"""Model file reader/writer.

Byte layout (see docs/model_format.md)::

    b"BNNM1 " + ascii decimal header length + b"\\n"
    header: UTF-8 JSON object of exactly that many bytes
    blob:   weight words of every layer, in layer order

Each layer's weights occupy ``out * kh * kw * ceil(in/128)`` 128-bit words in
(out, kh, kw, group) order; a word is 16 bytes, least significant byte first,
channel ``128*g + i`` at bit ``i``.  ``weight_offset``/``weight_bytes`` in each
layer entry locate its slice of the blob.

A *topology* file is the header alone (no magic line, no weights); it can be
instantiated with random weights for sizing and throughput studies.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bintensor import WORD_BYTES, LayerSpec, NetworkSpec, pack_weights, word_groups
from .errors import FormatError, ShapeError

MAGIC = b"BNNM1 "


def _layer_header(layer: LayerSpec, offset: int) -> dict:
    return {
        "kind": layer.kind,
        "in_channels": layer.in_channels,
        "out_channels": layer.out_channels,
        "kernel": [layer.kernel_h, layer.kernel_w],
        "stride": layer.stride,
        "padding": layer.padding,
        "shift": layer.shift,
        "pool": layer.pool,
        "thresholds": [int(t) for t in layer.thresholds],
        "weight_offset": offset,
        "weight_bytes": layer.weight_bytes,
    }


def dumps(net: NetworkSpec) -> bytes:
    layers, blobs, offset = [], [], 0
    for layer in net.layers:
        layers.append(_layer_header(layer, offset))
        blobs.append(layer.weights.tobytes())
        offset += layer.weight_bytes
    header = {
        "format": "bnnsim-model",
        "version": 1,
        "name": net.name,
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "ops_per_inference": net.ops_per_inference,
        "layers": layers,
    }
    text = json.dumps(header, indent=1, sort_keys=True).encode()
    return MAGIC + str(len(text)).encode() + b"\n" + text + b"".join(blobs)


def _layer_kwargs(entry: dict) -> dict:
    kh, kw = entry.get("kernel", [1, 1])
    return dict(
        kind=entry["kind"],
        in_channels=int(entry["in_channels"]),
        out_channels=int(entry["out_channels"]),
        kernel_h=int(kh), kernel_w=int(kw),
        stride=int(entry.get("stride", 1)),
        padding=int(entry.get("padding", 0)),
        shift=int(entry.get("shift", 0)),
        pool=entry.get("pool", "none"),
    )


def loads(data: bytes, source: str = "<model>") -> NetworkSpec:
    if not data.startswith(MAGIC):
        raise FormatError(f"{source}: missing {MAGIC!r} magic")
    nl = data.find(b"\n")
    try:
        hlen = int(data[len(MAGIC):nl])
        header = json.loads(data[nl + 1:nl + 1 + hlen])
    except ValueError as exc:
        raise FormatError(f"{source}: bad header: {exc}") from None
    blob = data[nl + 1 + hlen:]
    layers = []
    try:
        for i, entry in enumerate(header["layers"]):
            kw = _layer_kwargs(entry)
            off, size = int(entry["weight_offset"]), int(entry["weight_bytes"])
            shape = (kw["out_channels"], kw["kernel_h"], kw["kernel_w"],
                     word_groups(kw["in_channels"]), WORD_BYTES)
            if off + size > len(blob) or size != int(np.prod(shape)):
                raise FormatError(f"{source}: layer {i} weight slice is inconsistent with its shape")
            w = np.frombuffer(blob, dtype=np.uint8, count=size, offset=off).reshape(shape)
            layers.append(LayerSpec(weights=w, thresholds=np.asarray(entry["thresholds"]), **kw))
        return NetworkSpec(layers, tuple(header["input_shape"]), int(header["class_count"]),
                           header.get("ops_per_inference"), header.get("name", "network"))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{source}: missing or malformed field {exc}") from None
    except ShapeError as exc:
        raise ShapeError(f"{source}: {exc}") from None


def save(net: NetworkSpec, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path) -> NetworkSpec:
    p = Path(path)
    return loads(p.read_bytes(), str(p))


def random_network(topology: dict, seed: int = 0) -> NetworkSpec:
    """Instantiate a topology header with random ±1 weights.

    Missing thresholds default to half the per-output fan-in, which keeps
    roughly half of the activations positive.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for entry in topology["layers"]:
        kw = _layer_kwargs(entry)
        cin, cout = kw["in_channels"], kw["out_channels"]
        w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(cout, cin, kw["kernel_h"], kw["kernel_w"]))
        if "thresholds" in entry:
            thr = np.asarray(entry["thresholds"])
        else:
            fan_in = cin * kw["kernel_h"] * kw["kernel_w"]
            thr = np.full(cout, min(255, (fan_in // 2) >> kw["shift"]))
        layers.append(LayerSpec(weights=pack_weights(w), thresholds=thr, **kw))
    return NetworkSpec(layers, tuple(topology["input_shape"]), int(topology["class_count"]),
                       topology.get("ops_per_inference"), topology.get("name", "network"))


def load_topology(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
