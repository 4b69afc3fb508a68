"""Voltage-scaled power, frequency, energy and inference-rate model.

Built from a table of measured operating points (see :mod:`bnnsim.anchors`).
Between anchors, powers, frequency and energy are interpolated linearly in the
supply voltage; BER uses :func:`bnnsim.memsim.ber_from_voltage` (log-linear).
Units: voltage in V, frequency in MHz, power in uW, energy in pJ per op.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .anchors import COLUMNS, OperatingPoint, load_anchors
from .errors import DomainError, SingularFitError
from .memsim import ber_from_voltage
from .xne import effective_ops_per_cycle

_EPS = 1e-9


@dataclass(frozen=True)
class PowerSample:
    frequency: float  # MHz
    power: float  # uW

    def __post_init__(self):
        if not self.frequency > 0:
            raise DomainError(f"frequency must be positive, got {self.frequency}")


def fit_static_dynamic(samples: Sequence[PowerSample]) -> tuple[float, float]:
    """Least-squares fit of ``P = leak + c * f``; returns ``(leak, c)``.

    A negative leakage estimate is clamped to zero (with a warning) and the
    slope refit through the origin.
    """
    if len(samples) < 2:
        raise SingularFitError("need at least two samples")
    f = np.array([s.frequency for s in samples], dtype=float)
    p = np.array([s.power for s in samples], dtype=float)
    if np.ptp(f) == 0:
        raise SingularFitError("all samples share one frequency; leakage is not identifiable")
    a = np.column_stack([np.ones_like(f), f])
    (leak, c), *_ = np.linalg.lstsq(a, p, rcond=None)
    if leak < 0:
        warnings.warn(f"fitted leakage {leak:.4g} uW is negative; clamping to 0", RuntimeWarning,
                      stacklevel=2)
        leak = 0.0
        c = float(f @ p / (f @ f))
    return float(leak), float(c)


class PowerModel:
    def __init__(self, anchors: list[OperatingPoint] | None = None,
                 utilization: float | None = None, anchor_path: str | None = None):
        self.points = anchors if anchors is not None else load_anchors(anchor_path)
        self.anchor_path = anchor_path
        self.ops_per_cycle = (effective_ops_per_cycle() if utilization is None
                              else effective_ops_per_cycle(utilization))
        self._v = np.array([p.v for p in self.points])
        self._rows = np.array([p.as_row() for p in self.points])

    @property
    def v_min(self) -> float:
        return float(self._v[0])

    @property
    def v_max(self) -> float:
        return float(self._v[-1])

    def _check(self, v: float) -> None:
        if not (self.v_min - _EPS <= v <= self.v_max + _EPS) or math.isnan(v):
            raise DomainError(f"voltage {v} V outside [{self.v_min}, {self.v_max}] V")

    def operating_point(self, v: float) -> OperatingPoint:
        """Anchor row at ``v`` (exact at anchors, linearly interpolated between)."""
        self._check(v)
        hit = np.flatnonzero(np.abs(self._v - v) < _EPS)
        if hit.size:
            return self.points[int(hit[0])]
        row = [float(np.interp(v, self._v, self._rows[:, j])) for j in range(len(COLUMNS))]
        row[0] = float(v)
        row[-1] = self.ber(v)
        return OperatingPoint.from_row(row)

    def ber(self, v: float, floor: bool = False) -> float:
        self._check(v)
        return ber_from_voltage(v, floor=floor, anchors=self.anchor_path)

    def f_max(self, v: float) -> float:
        return self.operating_point(v).f_max

    def total_power(self, v: float) -> float:
        return self.operating_point(v).total_power

    def domain_power(self, v: float) -> dict[str, float]:
        return dict(self.operating_point(v).total)

    def leak_fraction(self, v: float) -> float:
        op = self.operating_point(v)
        return op.leak_power / op.total_power

    def energy_per_op(self, v: float) -> float:
        """Measured energy per binary op (pJ), interpolated."""
        return self.operating_point(v).energy

    def energy_per_op_computed(self, v: float) -> float:
        """Energy per op derived from total power and sustained throughput (pJ)."""
        op = self.operating_point(v)
        return op.total_power / (self.ops_per_cycle * op.f_max)

    def throughput(self, v: float) -> float:
        """Sustained binary ops per second at the maximum frequency for ``v``."""
        return self.ops_per_cycle * self.f_max(v) * 1e6

    def efficiency_tops_per_w(self, v: float) -> float:
        return self.throughput(v) / (self.total_power(v) * 1e-6) / 1e12

    def inference_metrics(self, net_or_ops, v: float) -> dict[str, float]:
        """Inference rate and rate per mW for a network (or a raw op count)."""
        ops = net_or_ops if isinstance(net_or_ops, (int, float)) else _ops_per_inference(net_or_ops)
        inf_s = self.throughput(v) / ops
        return {"inf_per_s": inf_s, "inf_per_s_per_mW": inf_s / (self.total_power(v) / 1000.0)}

    def tradeoff_table(self, voltages: Sequence[float],
                       accuracy_fn: Callable[[float], float] | None = None,
                       floor: bool = True) -> list[dict]:
        """One row per voltage (sorted): operating figures plus accuracy at its BER."""
        rows = []
        for v in sorted(float(x) for x in voltages):
            ber = self.ber(v, floor=floor)
            rows.append({
                "v": v,
                "f_max_mhz": self.f_max(v),
                "power_uw": self.total_power(v),
                "energy_pj_per_op": self.energy_per_op(v),
                "ber": ber,
                "accuracy": float("nan") if accuracy_fn is None else float(accuracy_fn(ber)),
            })
        return rows

    def energy_minimum(self) -> float:
        """Anchor voltage with the lowest measured energy per op."""
        return float(self._v[int(np.argmin(self._rows[:, COLUMNS.index("energy_pj_per_op")]))])


def _ops_per_inference(net) -> float:
    if getattr(net, "ops_per_inference", None):
        return float(net.ops_per_inference)
    return float(net.binary_ops())

