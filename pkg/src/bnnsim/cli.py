"""``bnnsim`` command-line entry point.

Every result file starts with a ``#`` provenance line carrying the SHA-256 of
the effective configuration, followed by a header row.  Runs are fully
determined by (config, seed).

Exit codes: 0 ok, 2 configuration error, 3 allocation or shape error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (
    AllocationError, BusError, ConfigError, DomainError, FormatError, ShapeError,
)
from .experiments import (
    ExperimentConfig, Workload, power_report, run_trial, selftest_sweep, sweep_ber,
    sweep_voltage, trial_seed,
)

log = logging.getLogger("bnnsim")

EXIT_CONFIG = 2
EXIT_ALLOC = 3
EXIT_IO = 4


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, provenance: str, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {provenance}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns] if isinstance(r, dict) else r)


def write_json(path: Path, provenance: str, payload: dict) -> None:
    doc = {"provenance": provenance, **payload}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_infer(cfg: ExperimentConfig, out: Path) -> None:
    work = Workload.from_config(cfg)
    oracle = work.oracle_predictions()
    res = run_trial(work, cfg, None, trial_seed(cfg.seed, 0, 0))
    prov = cfg.provenance("infer")
    labels = work.data.labels
    rows = [{"index": i, "label": int(labels[i]), "prediction": int(res.predictions[i]),
             "oracle": int(oracle[i])} for i in range(len(labels))]
    write_csv(out / "predictions.csv", prov, ["index", "label", "prediction", "oracle"], rows)
    mem = res.memory
    write_json(out / "infer.json", prov, {
        "samples": int(labels.size),
        "accuracy": res.accuracy,
        "oracle_accuracy": float(np.mean(oracle == labels)),
        "matches_oracle": int(np.sum(res.predictions == oracle)),
        "policy": cfg.policy,
        "cycles": res.stats.cycles,
        "mvps": res.stats.mvps,
        "memory": {"reads": mem.reads, "writes": mem.writes, "bits_read": mem.bits_read,
                   "sram_bits_read": mem.sram_bits_read, "read_flips": mem.read_flips,
                   "write_flips": mem.write_flips},
    })
    if cfg.trace:
        mem.write_trace_csv(out / "trace.csv")
    log.info("accuracy %.4f (fault-free %.4f)", res.accuracy, float(np.mean(oracle == labels)))


def cmd_sweep_ber(cfg: ExperimentConfig, out: Path) -> None:
    rows = sweep_ber(Workload.from_config(cfg), cfg)
    cols = ["ber", "trials", "mean_acc", "std_acc", "min_acc", "max_acc"]
    write_csv(out / "sweep_ber.csv", cfg.provenance("sweep-ber"), cols, rows)


def cmd_sweep_voltage(cfg: ExperimentConfig, out: Path) -> None:
    rows = sweep_voltage(Workload.from_config(cfg), cfg)
    cols = ["v", "f_max_mhz", "power_uw", "energy_pj_per_op", "ber", "accuracy", "std_acc",
            "accuracy_drop", "trials", "trials_matching_fault_free"]
    write_csv(out / "sweep_voltage.csv", cfg.provenance("sweep-voltage"), cols, rows)


def cmd_selftest(cfg: ExperimentConfig, out: Path) -> None:
    rows = selftest_sweep(cfg)
    cols = ["voltage", "ber_config", "bits_observed", "bit_errors", "estimate", "floor"]
    write_csv(out / "selftest.csv", cfg.provenance("selftest"), cols, rows)


def cmd_power_report(cfg: ExperimentConfig, out: Path) -> None:
    rep = power_report(cfg)
    prov = cfg.provenance("power-report")
    cols = rep["columns"]
    for name in ("anchors", "interpolated"):
        with open(out / f"{name}.csv", "w") as f:
            f.write(f"# {prov}\n" + ",".join(cols) + "\n")
            f.writelines(line + "\n" for line in rep[name])
    curve = rep["energy_curve"]
    write_csv(out / "energy_curve.csv", prov, list(curve[0]), curve)
    write_json(out / "power_report.json", prov, rep["summary"])


COMMANDS = {
    "infer": cmd_infer,
    "sweep-ber": cmd_sweep_ber,
    "sweep-voltage": cmd_sweep_voltage,
    "selftest": cmd_selftest,
    "power-report": cmd_power_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnnsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--samples", type=int, help="use only the first N dataset samples")
        s.add_argument("--policy", choices=["sram-exec", "scm-exec"])
        s.add_argument("--trace", action="store_true", default=None,
                       help="record every memory access (infer writes trace.csv)")
        s.add_argument("--out", type=Path)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.replace(seed=args.seed, trials=args.trials, samples=args.samples,
                       policy=args.policy, trace=args.trace,
                       out=None if args.out is None else str(args.out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, DomainError, FormatError) as exc:
        print(f"bnnsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AllocationError, ShapeError, BusError) as exc:
        print(f"bnnsim: {exc}", file=sys.stderr)
        return EXIT_ALLOC
    except OSError as exc:
        print(f"bnnsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
