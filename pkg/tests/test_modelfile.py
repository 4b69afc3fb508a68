import json

import numpy as np
import pytest

from bnnsim.bintensor import NetworkSpec, random_layer, random_tensor, oracle_network
from bnnsim.dataset import DatasetManifest
from bnnsim.errors import FormatError, ShapeError
from bnnsim.experiments import resolve_dataset, resolve_network
from bnnsim.modelfile import MAGIC, dumps, load, load_topology, loads, random_network, save


def small_net(seed=0):
    rng = np.random.default_rng(seed)
    conv = random_layer(rng, kind="conv", in_channels=20, out_channels=128, kernel_h=3, kernel_w=3,
                        padding=1, pool="max2x2", shift=3)
    fc = random_layer(rng, kind="linear", in_channels=128 * 4, out_channels=5)
    return NetworkSpec([conv, fc], (20, 4, 4), 5, ops_per_inference=1e6, name="small")


def test_model_roundtrip(tmp_path):
    net = small_net()
    save(net, tmp_path / "m.bnn")
    back = load(tmp_path / "m.bnn")
    assert dumps(back) == dumps(net)
    x = random_tensor(np.random.default_rng(1), (20, 4, 4))
    assert np.array_equal(oracle_network(back, x), oracle_network(net, x))
    assert back.ops_per_inference == 1e6 and back.name == "small"


def test_model_header_is_json():
    data = dumps(small_net())
    assert data.startswith(MAGIC)
    nl = data.index(b"\n")
    hlen = int(data[len(MAGIC):nl])
    header = json.loads(data[nl + 1:nl + 1 + hlen])
    assert header["layers"][1]["weight_offset"] == header["layers"][0]["weight_bytes"]
    assert len(data) == nl + 1 + hlen + sum(l["weight_bytes"] for l in header["layers"])


def test_model_format_errors():
    data = dumps(small_net())
    with pytest.raises(FormatError):
        loads(b"XXXX" + data)
    with pytest.raises(FormatError):
        loads(data[:-10])
    with pytest.raises(FormatError):
        loads(MAGIC + b"5\n{}   ")


def test_model_shape_errors_are_reported():
    data = bytearray(dumps(small_net()))
    text = data.decode("latin-1").replace('"class_count": 5', '"class_count": 6')
    with pytest.raises(ShapeError):
        loads(text.encode("latin-1"))


def test_random_network_from_topology():
    net = random_network(load_topology_dict(), seed=1)
    assert net.shapes()[-1][1] == (10, 1, 1)
    assert dumps(net) == dumps(random_network(load_topology_dict(), seed=1))


def load_topology_dict():
    return {"name": "t", "input_shape": [16, 4, 4], "class_count": 10, "layers": [
        {"kind": "conv", "in_channels": 16, "out_channels": 128, "kernel": [3, 3], "padding": 1,
         "pool": "max2x2"},
        {"kind": "linear", "in_channels": 512, "out_channels": 10}]}


def test_uvgg_topology_size():
    net = resolve_network("builtin:uvgg")
    fp = net.footprint()
    # about 312 kB of weights plus stored activations
    assert fp["total"] == pytest.approx(312 * 1024, rel=0.01)
    assert fp["total"] <= 448 * 1024
    assert net.ops_per_inference == pytest.approx(2.665e8)


def test_topology_errors(tmp_path):
    p = tmp_path / "t.json"
    p.write_text("{nope")
    with pytest.raises(FormatError):
        load_topology(p)


def test_dataset_roundtrip(tmp_path):
    data = resolve_dataset("builtin:toy").head(20)
    data.save(tmp_path / "d")
    back = DatasetManifest.load(tmp_path / "d")
    assert np.array_equal(back.inputs, data.inputs)
    assert np.array_equal(back.labels, data.labels)
    assert back.sample(3) == data.sample(3)
    assert len(back) == 20


def test_dataset_validation(tmp_path):
    with pytest.raises(ShapeError):
        DatasetManifest((128, 1, 1), 10, np.zeros((2, 2, 16), np.uint8), np.zeros(2, np.uint8))
    with pytest.raises(ShapeError):
        DatasetManifest((128, 1, 1), 10, np.zeros((2, 1, 16), np.uint8), np.array([0, 10], np.uint8))
    data = resolve_dataset("builtin:tiny").head(5)
    data.save(tmp_path / "d")
    (tmp_path / "d" / "labels.bin").write_bytes(b"\x00")
    with pytest.raises(FormatError):
        DatasetManifest.load(tmp_path / "d")
