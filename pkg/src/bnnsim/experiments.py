"""Experiment configuration and runners behind the command-line tool.

Every randomized trial gets its own memory model, engine and fault RNG.  The
fault seed of trial ``t`` at sweep point ``k`` is drawn from
``SeedSequence(seed, spawn_key=(k, t))``, so any trial can be rerun alone and
trials could be distributed without changing results.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .anchors import COLUMNS, format_row, load_anchors
from .bintensor import NetworkSpec, oracle_network
from .dataset import DatasetManifest
from .errors import ConfigError, ShapeError, SimError
from .memsim import POLICIES, FaultModel, MemoryMap, MemoryModel
from .modelfile import load as load_model
from .modelfile import load_topology, random_network
from .powermodel import PowerModel
from .runtime import DeployedNetwork
from .selftest import run_selftest
from .toy import VARIANTS

BUILTIN = "builtin:"
DEFAULT_BERS = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 0.5)
DEFAULT_VOLTAGES = (0.42, 0.44, 0.46, 0.48, 0.5, 0.55, 0.6, 0.62, 0.7, 0.8)
FAULT_TARGETS = ("read", "write", "both")


@dataclass
class ExperimentConfig:
    network: str = "builtin:toy"
    dataset: str = "builtin:toy"
    policy: str = "sram-exec"
    memory_map: list | None = None
    fault_mode: str = "uniform"
    # which fault knob a swept BER drives
    fault_target: str = "read"
    read_ber: float = 0.0
    write_ber: float = 0.0
    stuck_density: float = 0.0
    ber: list = field(default_factory=lambda: list(DEFAULT_BERS))
    voltages: list = field(default_factory=lambda: list(DEFAULT_VOLTAGES))
    floor: bool = True
    trials: int = 10
    seed: int = 0
    samples: int | None = None
    anchors: str | None = None
    selftest_region: str = "interleaved_sram"
    selftest_iterations: int = 1
    report_voltages: list = field(default_factory=lambda: [0.44, 0.47, 0.52, 0.65])
    report_network: str = "builtin:uvgg"
    out: str = "results"
    trace: bool = False

    def __post_init__(self):
        try:
            self.validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SimError):
                raise
            raise ConfigError(f"malformed config value: {exc}") from None

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {sorted(POLICIES)}")
        if self.fault_target not in FAULT_TARGETS:
            raise ConfigError(f"fault_target must be one of {FAULT_TARGETS}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if self.samples is not None and int(self.samples) < 1:
            raise ConfigError("samples must be >= 1")
        if int(self.selftest_iterations) < 1:
            raise ConfigError("selftest_iterations must be >= 1")
        for b in list(self.ber) + [self.read_ber, self.write_ber, self.stuck_density]:
            if not 0.0 <= float(b) <= 1.0 or math.isnan(float(b)):
                raise ConfigError(f"BER {b} outside [0, 1]")
        lo, hi = _anchor_range(self.anchors)
        for v in list(self.voltages) + list(self.report_voltages):
            if not lo - 1e-9 <= float(v) <= hi + 1e-9:
                raise ConfigError(f"voltage {v} outside anchor range [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        d = asdict(self)
        d.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**d)

    def digest(self) -> str:
        """SHA-256 of the canonical config, ignoring output location and tracing."""
        d = asdict(self)
        d.pop("out")
        d.pop("trace")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def provenance(self, command: str) -> str:
        return (f"bnnsim {__version__} command={command} seed={self.seed} "
                f"config_sha256={self.digest()}")


def _anchor_range(path):
    pts = load_anchors(path)
    return pts[0].v, pts[-1].v


def _data_dir():
    return Path(str(resources.files("bnnsim").joinpath("data")))


def resolve_network(ref: str) -> NetworkSpec:
    name = ref[len(BUILTIN):]
    if ref.startswith(BUILTIN) and name in VARIANTS:
        return load_model(_data_dir() / name / f"{name}.bnn")
    if ref == "builtin:uvgg":
        return random_network(load_topology(_data_dir() / "uvgg.json"))
    if ref.startswith(BUILTIN):
        raise ConfigError(f"unknown builtin network {ref!r}")
    if ref.endswith(".json"):
        return random_network(load_topology(ref))
    return load_model(ref)


def resolve_dataset(ref: str) -> DatasetManifest:
    name = ref[len(BUILTIN):]
    if ref.startswith(BUILTIN) and name in VARIANTS:
        return DatasetManifest.load(_data_dir() / name / "dataset")
    if ref.startswith(BUILTIN):
        raise ConfigError(f"unknown builtin dataset {ref!r}")
    return DatasetManifest.load(ref)


def trial_seed(master: int, point: int, trial: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(int(point), int(trial)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class Workload:
    net: NetworkSpec
    data: DatasetManifest
    mmap: MemoryMap

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Workload":
        net = resolve_network(cfg.network)
        data = resolve_dataset(cfg.dataset).head(cfg.samples)
        if tuple(data.input_shape) != tuple(net.input_shape):
            raise ShapeError(f"dataset input shape {data.input_shape} != network {net.input_shape}")
        if data.class_count != net.class_count:
            raise ShapeError("dataset and network disagree on class count")
        mmap = MemoryMap.from_config(cfg.memory_map) if cfg.memory_map else MemoryMap.default()
        return cls(net, data, mmap)

    def oracle_predictions(self) -> np.ndarray:
        return np.array([int(np.argmax(oracle_network(self.net, x))) for x, _ in self.data])


def fault_model(cfg: ExperimentConfig, ber: float | None, seed: int) -> FaultModel:
    read, write = cfg.read_ber, cfg.write_ber
    if ber is not None:
        if cfg.fault_target in ("read", "both"):
            read = ber
        if cfg.fault_target in ("write", "both"):
            write = ber
    return FaultModel(read_ber=read, write_ber=write, mode=cfg.fault_mode,
                      stuck_density=cfg.stuck_density, rng_seed=seed)


@dataclass
class TrialResult:
    seed: int
    predictions: np.ndarray
    accuracy: float
    stats: Any
    memory: MemoryModel


def run_trial(work: Workload, cfg: ExperimentConfig, ber: float | None, seed: int) -> TrialResult:
    mem = MemoryModel(work.mmap, fault_model(cfg, ber, seed), trace=cfg.trace)
    dep = DeployedNetwork(work.net, mem, POLICIES[cfg.policy])
    preds = np.array([dep.predict(x) for x, _ in work.data], dtype=np.int64)
    acc = float(np.mean(preds == work.data.labels))
    return TrialResult(seed, preds, acc, dep.stats, mem)


def summarize(accs) -> dict:
    """Mean and sample standard deviation (n-1) of per-trial accuracies.

    Uses exact rational arithmetic, so identical trials give a std of exactly 0.
    """
    a = [float(x) for x in accs]
    return {
        "trials": len(a),
        "mean_acc": statistics.mean(a),
        "std_acc": statistics.stdev(a) if len(a) > 1 else 0.0,
        "min_acc": min(a),
        "max_acc": max(a),
    }


def ber_point(work: Workload, cfg: ExperimentConfig, point: int, ber: float,
              baseline: np.ndarray | None = None) -> dict:
    accs, equal = [], 0
    for t in range(cfg.trials):
        res = run_trial(work, cfg, ber, trial_seed(cfg.seed, point, t))
        accs.append(res.accuracy)
        if baseline is not None:
            equal += int(np.array_equal(res.predictions, baseline))
    row = {"ber": float(ber), **summarize(accs)}
    if baseline is not None:
        row["trials_matching_fault_free"] = equal
    return row


def sweep_ber(work: Workload, cfg: ExperimentConfig) -> list[dict]:
    bers = sorted(float(b) for b in cfg.ber)
    return [ber_point(work, cfg, k, b) for k, b in enumerate(bers)]


def sweep_voltage(work: Workload, cfg: ExperimentConfig, power: PowerModel | None = None) -> list[dict]:
    power = power or PowerModel(anchor_path=cfg.anchors)
    baseline = work.oracle_predictions()
    base_acc = float(np.mean(baseline == work.data.labels))
    cache: dict[float, dict] = {}

    def accuracy_for(ber: float) -> float:
        if ber not in cache:
            cache[ber] = ber_point(work, cfg, len(cache), ber, baseline)
        return cache[ber]["mean_acc"]

    rows = []
    for r in power.tradeoff_table(cfg.voltages, accuracy_for, floor=cfg.floor):
        pt = cache[r["ber"]]
        rows.append({**r, "std_acc": pt["std_acc"], "accuracy_drop": base_acc - r["accuracy"],
                     "trials": pt["trials"],
                     "trials_matching_fault_free": pt["trials_matching_fault_free"]})
    return rows


def selftest_sweep(cfg: ExperimentConfig, mmap: MemoryMap | None = None) -> list[dict]:
    mmap = mmap or (MemoryMap.from_config(cfg.memory_map) if cfg.memory_map else MemoryMap.default())
    power = PowerModel(anchor_path=cfg.anchors)
    rows = []
    for k, v in enumerate(sorted(float(x) for x in cfg.voltages)):
        ber = power.ber(v, floor=cfg.floor)
        mem = MemoryModel(mmap, FaultModel(read_ber=ber, rng_seed=trial_seed(cfg.seed, k, 0)))
        est = run_selftest(mem, cfg.selftest_region, cfg.selftest_iterations,
                           seed0=trial_seed(cfg.seed, k, 1))
        rows.append({"voltage": v, "ber_config": ber, "bits_observed": est.bits_observed,
                     "bit_errors": est.bit_errors, "estimate": est.format(), "floor": est.floor})
    return rows


def power_report(cfg: ExperimentConfig) -> dict:
    """Anchor table, interpolated points, energy curve and headline figures."""
    power = PowerModel(anchor_path=cfg.anchors)
    anchors = [format_row(p.as_row()) for p in power.points]
    interp = [format_row(power.operating_point(float(v)).as_row())
              for v in sorted(float(x) for x in cfg.report_voltages)]
    net = resolve_network(cfg.report_network)
    curve = []
    for p in power.points:
        m = power.inference_metrics(net, p.v)
        curve.append({
            "v": p.v,
            "f_max_mhz": p.f_max,
            "power_uw": p.total_power,
            "leak_fraction": power.leak_fraction(p.v),
            "energy_pj_per_op": p.energy,
            "energy_pj_per_op_computed": power.energy_per_op_computed(p.v),
            "throughput_gops": power.throughput(p.v) / 1e9,
            "efficiency_tops_per_w": power.efficiency_tops_per_w(p.v),
            "inf_per_s": m["inf_per_s"],
            "inf_per_s_per_mW": m["inf_per_s_per_mW"],
        })
    vmin = power.energy_minimum()
    summary = {
        "energy_minimum_v": vmin,
        "energy_minimum_pj_per_op": power.energy_per_op(vmin),
        "lowest_power_v": power.v_min,
        "lowest_power_uw": power.total_power(power.v_min),
        "leak_fraction_at_lowest_v": power.leak_fraction(power.v_min),
        "power_ratio_energy_min_to_lowest": power.total_power(vmin) / power.total_power(power.v_min),
        "nominal_v": power.v_max,
        "nominal_energy_pj_per_op": power.energy_per_op(power.v_max),
        "energy_ratio_nominal_to_minimum": power.energy_per_op(power.v_max) / power.energy_per_op(vmin),
        "ops_per_cycle": power.ops_per_cycle,
        "report_network": net.name,
        "report_network_ops_per_inference": net.ops_per_inference or net.binary_ops(),
    }
    return {"columns": COLUMNS, "anchors": anchors, "interpolated": interp,
            "energy_curve": curve, "summary": summary}

