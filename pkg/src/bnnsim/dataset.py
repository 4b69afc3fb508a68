"""Bit-packed labelled datasets stored as a directory.

``manifest.json`` holds ``count``, ``input_shape``, ``class_count`` and the
names of two raw files: ``inputs`` (``count`` packed tensors back to back, each
in the :class:`~bnnsim.bintensor.BinaryTensor` word layout) and ``labels``
(one unsigned byte per sample).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bintensor import WORD_BYTES, BinaryTensor, word_groups
from .errors import FormatError, ShapeError


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    input_shape: tuple[int, int, int]
    class_count: int
    inputs: np.ndarray  # (count, words, 16) uint8
    labels: np.ndarray  # (count,) uint8

    def __post_init__(self):
        c, h, w = self.input_shape
        words = word_groups(c) * h * w
        if self.inputs.ndim != 3 or self.inputs.shape[1:] != (words, WORD_BYTES):
            raise ShapeError(f"inputs shape {self.inputs.shape} does not match {self.input_shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("one label per sample required")
        if self.labels.size and int(self.labels.max()) >= self.class_count:
            raise ShapeError("label outside class range")

    @property
    def count(self) -> int:
        return int(self.labels.size)

    def __len__(self) -> int:
        return self.count

    def sample(self, i: int) -> BinaryTensor:
        c, h, w = self.input_shape
        return BinaryTensor(c, h, w, self.inputs[i])

    def __iter__(self):
        for i in range(self.count):
            yield self.sample(i), int(self.labels[i])

    def head(self, n: int | None) -> "DatasetManifest":
        if n is None or n >= self.count:
            return self
        return DatasetManifest(self.input_shape, self.class_count, self.inputs[:n], self.labels[:n])

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "inputs.bin").write_bytes(self.inputs.tobytes())
        (d / "labels.bin").write_bytes(self.labels.astype(np.uint8).tobytes())
        manifest = {
            "count": self.count,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "inputs": "inputs.bin",
            "labels": "labels.bin",
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "DatasetManifest":
        d = Path(directory)
        try:
            m = json.loads((d / "manifest.json").read_text())
            shape = tuple(int(v) for v in m["input_shape"])
            count = int(m["count"])
            raw = np.frombuffer((d / m["inputs"]).read_bytes(), dtype=np.uint8)
            labels = np.frombuffer((d / m["labels"]).read_bytes(), dtype=np.uint8)
            class_count = int(m["class_count"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{d}: bad dataset manifest: {exc}") from None
        c, h, w = shape
        words = word_groups(c) * h * w
        if raw.size != count * words * WORD_BYTES or labels.size != count:
            raise FormatError(f"{d}: file sizes do not match count={count}, shape={shape}")
        return cls(shape, class_count, raw.reshape(count, words, WORD_BYTES), labels)
