"""Measured operating points (voltage, max frequency, per-domain power, energy, BER).

CSV schema, one row per supply voltage, ascending::

    v, f_max_mhz,
    p_tot_mem_array, p_tot_mem_periph, p_tot_logic,
    p_leak_mem_array, p_leak_mem_periph, p_leak_logic,
    p_dyn_mem_array, p_dyn_mem_periph, p_dyn_logic,
    energy_pj_per_op, ber

Powers are in uW, ``ber`` is a probability (not a percentage).  Lines starting
with ``#`` are comments.  Values are written with Python's shortest float
``repr`` so that parsing and re-emitting a file is byte-stable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import FormatError

DOMAINS = ("mem_array", "mem_periph", "logic")
COLUMNS = (
    ["v", "f_max_mhz"]
    + [f"p_{part}_{d}" for part in ("tot", "leak", "dyn") for d in DOMAINS]
    + ["energy_pj_per_op", "ber"]
)


@dataclass(frozen=True)
class OperatingPoint:
    v: float
    f_max: float  # MHz
    total: dict[str, float]  # uW per domain
    leak: dict[str, float]
    dyn: dict[str, float]
    energy: float  # pJ/op
    ber: float

    @property
    def total_power(self) -> float:
        return sum(self.total[d] for d in DOMAINS)

    @property
    def leak_power(self) -> float:
        return sum(self.leak[d] for d in DOMAINS)

    @property
    def dyn_power(self) -> float:
        return sum(self.dyn[d] for d in DOMAINS)

    def as_row(self) -> list[float]:
        return ([self.v, self.f_max]
                + [self.total[d] for d in DOMAINS]
                + [self.leak[d] for d in DOMAINS]
                + [self.dyn[d] for d in DOMAINS]
                + [self.energy, self.ber])

    @classmethod
    def from_row(cls, values: list[float]) -> "OperatingPoint":
        tot = dict(zip(DOMAINS, values[2:5]))
        leak = dict(zip(DOMAINS, values[5:8]))
        dyn = dict(zip(DOMAINS, values[8:11]))
        return cls(values[0], values[1], tot, leak, dyn, values[11], values[12])


def format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def default_anchor_text() -> str:
    return resources.files("bnnsim").joinpath("data/operating_points.csv").read_text()


def parse_anchors(text: str, source: str = "<anchors>") -> list[OperatingPoint]:
    """Parse anchor CSV text; errors name the offending line and column."""
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError(f"{source}: no header row")
    hdr_no, hdr = lines[0]
    header = next(csv.reader([hdr]))
    if [h.strip() for h in header] != COLUMNS:
        raise FormatError(f"{source}:{hdr_no}: header must be {','.join(COLUMNS)}")
    points = []
    for lineno, line in lines[1:]:
        cells = next(csv.reader(io.StringIO(line)))
        if len(cells) != len(COLUMNS):
            raise FormatError(
                f"{source}:{lineno}: expected {len(COLUMNS)} columns, found {len(cells)}")
        values = []
        for col, cell in enumerate(cells, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise FormatError(
                    f"{source}:{lineno}:{col} ({COLUMNS[col - 1]}): not a number: {cell!r}") from None
        points.append(OperatingPoint.from_row(values))
    if not points:
        raise FormatError(f"{source}: no data rows")
    vs = [p.v for p in points]
    if any(b <= a for a, b in zip(vs, vs[1:])):
        raise FormatError(f"{source}: voltages must be strictly increasing")
    return points


def load_anchors(path: str | Path | None = None) -> list[OperatingPoint]:
    if path is None:
        return parse_anchors(default_anchor_text(), "operating_points.csv")
    p = Path(path)
    return parse_anchors(p.read_text(), str(p))
