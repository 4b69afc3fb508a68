import numpy as np
import pytest

from bnnsim.bintensor import oracle_network
from bnnsim.errors import AllocationError, ShapeError
from bnnsim.experiments import resolve_dataset, resolve_network
from bnnsim.memsim import SCM, SCM_EXEC, SRAM, SRAM_EXEC, FaultModel, MemoryModel
from bnnsim.runtime import DeployedNetwork
from bnnsim.toy import build_toy


def test_toy_placement_follows_policy():
    net = resolve_network("builtin:toy")
    mem = MemoryModel()
    dep = DeployedNetwork(net, mem, SRAM_EXEC)
    for key, rng in dep.placement.items():
        kind = mem.map[rng.region].kind
        if "thresholds" in key or key == "instructions":
            assert kind == SCM
        else:
            assert kind == SRAM


def test_toy_does_not_fit_in_scm():
    with pytest.raises(AllocationError):
        DeployedNetwork(resolve_network("builtin:toy"), MemoryModel(), SCM_EXEC)


def test_tiny_fits_in_scm_and_ignores_faults():
    net = resolve_network("builtin:tiny")
    data = resolve_dataset("builtin:tiny").head(50)
    mem = MemoryModel(faults=FaultModel(read_ber=0.5, write_ber=0.5))
    dep = DeployedNetwork(net, mem, SCM_EXEC)
    assert set(dep.footprint_by_kind()) == {SCM}
    for x, _ in data:
        assert np.array_equal(dep.infer(x), oracle_network(net, x))
    assert mem.read_flips == 0


def test_engine_path_matches_oracle_on_toy():
    net = resolve_network("builtin:toy")
    data = resolve_dataset("builtin:toy").head(100)
    dep = DeployedNetwork(net, MemoryModel())
    for x, _ in data:
        assert np.array_equal(dep.infer(x), oracle_network(net, x))


def test_classifier_outputs_stay_out_of_memory():
    net = resolve_network("builtin:tiny")
    mem = MemoryModel(trace=True)
    dep = DeployedNetwork(net, mem)
    mem.trace.clear()
    dep.infer(resolve_dataset("builtin:tiny").sample(0))
    writes = [t for t in mem.trace if t.op == "W"]
    # the input tensor and one word of hidden activations
    assert [w.size for w in writes] == [32, 16]


def test_input_shape_checked():
    dep = DeployedNetwork(resolve_network("builtin:tiny"), MemoryModel())
    with pytest.raises(ShapeError):
        dep.infer(resolve_dataset("builtin:toy").sample(0))


def test_toy_builder_is_deterministic_and_accurate():
    net_a, data_a = build_toy(input_bits=256, hidden=32, per_class=20)
    net_b, data_b = build_toy(input_bits=256, hidden=32, per_class=20)
    assert np.array_equal(data_a.inputs, data_b.inputs)
    preds = np.array([np.argmax(oracle_network(net_a, x)) for x, _ in data_a])
    assert np.mean(preds == data_a.labels) > 0.8


def test_bundled_toy_matches_builder():
    from bnnsim.modelfile import dumps
    net, data = build_toy()
    assert dumps(net) == dumps(resolve_network("builtin:toy"))
    assert np.array_equal(data.inputs, resolve_dataset("builtin:toy").inputs)


def test_bundled_baseline_accuracy():
    net = resolve_network("builtin:toy")
    data = resolve_dataset("builtin:toy")
    preds = np.array([np.argmax(oracle_network(net, x)) for x, _ in data])
    acc = float(np.mean(preds == data.labels))
    assert 0.88 <= acc <= 0.96
    assert np.bincount(data.labels).tolist() == [100] * 10
