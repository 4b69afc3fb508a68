"""Synthetic 10-class dataset and a hand-constructed BNN that classifies it.

Each class has a random binary prototype.  A sample copies its class
prototype and flips every bit with a per-sample noise rate.  A fraction of
samples is drawn from a different class than its label, which caps the
fault-free accuracy below 100% without creating borderline decisions.

The network is built, not trained: every hidden unit is a template matcher
(a perturbed copy of one class prototype) with a threshold halfway between
the expected match count of its own class and of an unrelated pattern; each
classifier output agrees with the hidden units of its class.

Run ``python -m bnnsim.toy DATADIR`` to regenerate the bundled files.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .bintensor import LINEAR, LayerSpec, NetworkSpec, pack, pack_weights
from .dataset import DatasetManifest
from .modelfile import save


def _threshold(expected_popcount: float) -> tuple[int, int]:
    """Smallest shift that fits ``expected_popcount`` into 8 bits."""
    shift = 0
    while round(expected_popcount / (1 << shift)) > 255:
        shift += 1
    return int(round(expected_popcount / (1 << shift))), shift


def build_toy(seed: int = 2020, input_bits: int = 1024, hidden: int = 128, classes: int = 10,
              per_class: int = 100, noise=(0.05, 0.30), label_noise: float = 0.08,
              unit_perturb: float = 0.10):
    """Returns (NetworkSpec, DatasetManifest)."""
    rng = np.random.default_rng(seed)
    signs = np.array([-1, 1], dtype=np.int8)
    protos = rng.choice(signs, size=(classes, input_bits))

    owner = np.arange(hidden) % classes
    flips = rng.random((hidden, input_bits)) < unit_perturb
    w1 = np.where(flips, -protos[owner], protos[owner])

    # expected agreement of a unit with a sample of its own class at mid noise
    q = float(np.mean(noise))
    agree_own = (1 - q) * (1 - unit_perturb) + q * unit_perturb
    expected = 0.5 * (agree_own * input_bits + 0.5 * input_bits)
    t1, s1 = _threshold(expected)

    w2 = np.where(owner[None, :] == np.arange(classes)[:, None], 1, -1).astype(np.int8)
    layers = [
        LayerSpec(kind=LINEAR, in_channels=input_bits, out_channels=hidden,
                  thresholds=np.full(hidden, t1), shift=s1, weights=pack_weights(w1)),
        LayerSpec(kind=LINEAR, in_channels=hidden, out_channels=classes,
                  thresholds=np.zeros(classes), weights=pack_weights(w2)),
    ]
    net = NetworkSpec(layers, (input_bits, 1, 1), classes, name=f"toy{input_bits}")

    labels = np.repeat(np.arange(classes), per_class)
    rng.shuffle(labels)
    source = labels.copy()
    swap = rng.random(labels.size) < label_noise
    source[swap] = (labels[swap] + rng.integers(1, classes, swap.sum())) % classes
    rates = rng.uniform(*noise, size=labels.size)
    x = protos[source]
    x = np.where(rng.random(x.shape) < rates[:, None], -x, x)
    words = np.stack([pack(v, input_bits).words for v in x])
    data = DatasetManifest((input_bits, 1, 1), classes, words, labels.astype(np.uint8))
    return net, data


# bundled variants: "toy" for accuracy sweeps, "tiny" small enough for SCM-only placement
VARIANTS = {
    "toy": {},
    "tiny": {"input_bits": 256, "hidden": 32},
}


def write_bundle(datadir) -> None:
    for name, kwargs in VARIANTS.items():
        out = Path(datadir) / name
        out.mkdir(parents=True, exist_ok=True)
        net, data = build_toy(**kwargs)
        save(net, out / f"{name}.bnn")
        data.save(out / "dataset")


if __name__ == "__main__":
    write_bundle(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data")
