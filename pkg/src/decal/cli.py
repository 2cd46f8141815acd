"""Command-line entry point.

Five commands (calibrate, audit, synth, experiment, report), each driven by
a flat JSON config parsed strictly: unknown keys, type mismatches, and
out-of-range values name the offending key and exit with code 2.  Exit 0
means success with every declared gate passing, 1 a gate failure, 3 a
runtime failure.  All artifacts land in the --out directory and are listed
in manifest.json, which is written last and is the only file allowed to
carry nondeterministic fields (timestamp, wall time).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .audit import AuditReport, audit, random_loss_pool
from .calibrate import HELDOUT_DELTA, CalibConfig, run_calibration
from .experiments import (
    ExperimentResult,
    convergence_experiment,
    distinguishing_experiment,
    hoeffding_halfwidth,
    regret_experiment,
    sample_complexity_sweep,
    uniform_convergence_experiment,
)
from .kernel import KERNEL_KINDS, KernelSpec
from .model import kernel_to_doc, loss_to_doc, predictor_to_doc, save_json
from .synth import gen_lower_bound, planted_bias_instance

RIDGE_LAMBDA = 1.0  # alg2's regularizer is fixed, echoed for the record


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Strict flat-config parsing


REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | list_int | list_float
    default: object = REQUIRED
    minimum: float | None = None
    maximum: float | None = None
    exclusive_min: bool = False
    exclusive_max: bool = False
    choices: tuple | None = None
    allow_none: bool = False


def _coerce_scalar(key: str, value, kind: str):
    if isinstance(value, bool):
        raise ConfigError(f"config key {key!r}: expected {kind}, got a boolean")
    if kind == "int":
        if not isinstance(value, int):
            raise ConfigError(f"config key {key!r}: expected an integer")
        return value
    if kind == "float":
        if not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r}: expected a number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r}: expected a string")
        return value
    raise AssertionError(kind)


def _check_range(key: str, value, f: Field) -> None:
    if f.minimum is not None:
        if f.exclusive_min and not value > f.minimum:
            raise ConfigError(f"config key {key!r}: must be > {f.minimum}")
        if not f.exclusive_min and value < f.minimum:
            raise ConfigError(f"config key {key!r}: must be >= {f.minimum}")
    if f.maximum is not None:
        if f.exclusive_max and not value < f.maximum:
            raise ConfigError(f"config key {key!r}: must be < {f.maximum}")
        if not f.exclusive_max and value > f.maximum:
            raise ConfigError(f"config key {key!r}: must be <= {f.maximum}")


def _validate_field(key: str, value, f: Field):
    if value is None:
        if f.allow_none:
            return None
        raise ConfigError(f"config key {key!r}: null is not allowed")
    if f.kind.startswith("list_"):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"config key {key!r}: expected a nonempty list")
        item_kind = f.kind.removeprefix("list_")
        out = []
        for item in value:
            item = _coerce_scalar(key, item, item_kind)
            _check_range(key, item, f)
            out.append(item)
        return out
    value = _coerce_scalar(key, value, f.kind)
    if f.choices is not None and value not in f.choices:
        raise ConfigError(f"config key {key!r}: must be one of {sorted(f.choices)}")
    _check_range(key, value, f)
    return value


def parse_config(doc: dict, schema: dict[str, Field]) -> dict:
    """Resolve a flat config document against a schema, strictly.

    Unknown keys are errors; missing keys take schema defaults; every value
    is type- and range-checked.  Returns the fully-resolved mapping.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for key in doc:
        if key not in schema:
            raise ConfigError(f"unknown config key: {key!r}")
    resolved = {}
    for key, f in schema.items():
        if key in doc:
            resolved[key] = _validate_field(key, doc[key], f)
        elif f.default is REQUIRED:
            raise ConfigError(f"missing required config key: {key!r}")
        else:
            resolved[key] = f.default
    return resolved


KERNEL_FIELDS = {
    "kernel_kind": Field("str", choices=KERNEL_KINDS),
    "kernel_dim": Field("int", minimum=1),
    "R2": Field("float", minimum=0.0, exclusive_min=True),
}

PLANTED_FIELDS = {
    "shift_norm": Field("float", default=0.3, minimum=0.0),
    "support_size": Field("int", default=24, minimum=2),
    "context_dim": Field("int", default=2, minimum=1),
    "context_kind": Field("str", default="gaussian", choices=("gaussian", "uniform")),
    "instance_seed": Field("int", default=17, minimum=0),
}

CALIBRATE_SCHEMA = {
    **KERNEL_FIELDS,
    **PLANTED_FIELDS,
    "epsilon": Field("float", minimum=0.0, exclusive_min=True),
    "beta": Field("float", minimum=0.0),
    "R1": Field("float", default=1.0, minimum=0.0, exclusive_min=True),
    "n_actions": Field("int", default=2, minimum=1),
    "algorithm": Field("str", default="alg1", choices=("alg1", "alg2")),
    "eta": Field("float", default=None, minimum=0.0, exclusive_min=True, allow_none=True),
    "max_iters": Field("int", default=None, minimum=1, allow_none=True),
    "audit_batch_size": Field("int", default=192, minimum=8),
    "pool_size": Field("int", default=32, minimum=1),
    "heldout_size": Field("int", default=768, minimum=8),
    "seed": Field("int", default=0, minimum=0),
}

AUDIT_SCHEMA = {
    **KERNEL_FIELDS,
    **PLANTED_FIELDS,
    "epsilon": Field("float", minimum=0.0, exclusive_min=True),
    "beta": Field("float", minimum=0.0),
    "R1": Field("float", default=1.0, minimum=0.0, exclusive_min=True),
    "n_actions": Field("int", default=2, minimum=1),
    "pool_size": Field("int", default=32, minimum=1),
    "n": Field("int", default=512, minimum=8),
    "approx_offset": Field("float", default=0.0, minimum=0.0),
    "seed": Field("int", default=0, minimum=0),
}

SYNTH_COMMON = {
    "instance": Field("str", choices=("planted_bias", "lower_bound")),
    "n": Field("int", minimum=1),
    "seed": Field("int", default=0, minimum=0),
}

SYNTH_PLANTED_SCHEMA = {**SYNTH_COMMON, **KERNEL_FIELDS, **PLANTED_FIELDS}

SYNTH_LOWER_SCHEMA = {
    **SYNTH_COMMON,
    "d": Field("int", minimum=2),
    "epsilon": Field("float", minimum=0.0, maximum=0.5, exclusive_min=True, exclusive_max=True),
    "world": Field("int", choices=(1, 2)),
}

EXPERIMENT_SCHEMAS = {
    "convergence": {
        "experiment": Field("str", choices=("convergence",)),
        "epsilons": Field("list_float", minimum=0.0, exclusive_min=True),
        "beta": Field("float", default=4.0, minimum=0.0),
        "R1": Field("float", default=1.0, minimum=0.0, exclusive_min=True),
        "R2": Field("float", default=1.5, minimum=0.0, exclusive_min=True),
        "shift_norm": Field("float", default=0.3, minimum=0.0),
        "n_actions": Field("int", default=2, minimum=1),
        "audit_batch_size": Field("int", default=192, minimum=8),
        "heldout_size": Field("int", default=512, minimum=8),
        "seed": Field("int", default=0, minimum=0),
    },
    "uniform_convergence": {
        "experiment": Field("str", choices=("uniform_convergence",)),
        "n_grid": Field("list_int", minimum=8),
        "pool_size": Field("int", default=16, minimum=1),
        "reference_n": Field("int", default=8192, minimum=64),
        "resamples": Field("int", default=20, minimum=2),
        "beta": Field("float", default=2.0, minimum=0.0),
        "R1": Field("float", default=1.0, minimum=0.0, exclusive_min=True),
        "seed": Field("int", default=0, minimum=0),
    },
    "regret": {
        "experiment": Field("str", choices=("regret",)),
        "epsilon": Field("float", default=0.1, minimum=0.0, exclusive_min=True),
        "beta": Field("float", default=20.0, minimum=0.0, exclusive_min=True),
        "R1": Field("float", default=1.0, minimum=0.0, exclusive_min=True),
        "R2": Field("float", default=1.5, minimum=0.0, exclusive_min=True),
        "n_actions": Field("int", default=2, minimum=1),
        "loss_count": Field("int", default=16, minimum=1),
        "regret_batch_size": Field("int", default=16384, minimum=64),
        "shift_norm": Field("float", default=0.3, minimum=0.0),
        "algorithm": Field("str", default="alg1", choices=("alg1", "alg2")),
        "audit_batch_size": Field("int", default=192, minimum=8),
        "pool_size": Field("int", default=32, minimum=1),
        "heldout_size": Field("int", default=768, minimum=8),
        "seed": Field("int", default=0, minimum=0),
    },
    "distinguishing": {
        "experiment": Field("str", choices=("distinguishing",)),
        "d_grid": Field("list_int", minimum=2),
        "n_grid": Field("list_int", minimum=1),
        "epsilon": Field("float", default=0.2, minimum=0.0, maximum=1.0 / 3.0,
                         exclusive_min=True, exclusive_max=True),
        "trials": Field("int", default=1000, minimum=100),
        "decce_samples": Field("int", default=1000, minimum=100),
        "seed": Field("int", default=0, minimum=0),
    },
    "sample_complexity": {
        "experiment": Field("str", choices=("sample_complexity",)),
        "eps_grid": Field("list_float", minimum=0.0, exclusive_min=True),
        "shift_norm": Field("float", default=0.3, minimum=0.0),
        "beta": Field("float", default=4.0, minimum=0.0),
        "n_actions": Field("int", default=2, minimum=1),
        "seed": Field("int", default=0, minimum=0),
    },
}

REPORT_SCHEMA = {"run_dir": Field("str")}


# ---------------------------------------------------------------------------
# Output plumbing


def _sanitize(doc):
    """Replace non-finite floats with None so emitted JSON is standard."""
    if isinstance(doc, dict):
        return {k: _sanitize(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_sanitize(v) for v in doc]
    if isinstance(doc, np.floating):
        doc = float(doc)
    if isinstance(doc, np.integer):
        doc = int(doc)
    if isinstance(doc, float) and not math.isfinite(doc):
        return None
    return doc


class RunDir:
    """Output directory with an output ledger; manifest.json goes last."""

    def __init__(self, out: Path, quiet: bool):
        self.path = out
        self.quiet = quiet
        self.outputs: list[str] = []
        self.t0 = time.monotonic()
        out.mkdir(parents=True, exist_ok=True)

    def write_json(self, name: str, doc: dict) -> None:
        save_json(self.path / name, _sanitize(doc))
        self.outputs.append(name)

    def write_csv(self, name: str, rows) -> None:
        with open(self.path / name, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        self.outputs.append(name)

    def finish(self, command: str, config: dict, threads: int) -> None:
        manifest = {
            "command": command,
            "config": _sanitize(config),
            "outputs": self.outputs,
            "threads": threads,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_ms": (time.monotonic() - self.t0) * 1000.0,
        }
        save_json(self.path / "manifest.json", manifest)
        if not self.quiet:
            names = ", ".join(self.outputs + ["manifest.json"])
            print(f"{command}: wrote {names} under {self.path}")


def _float_cell(v) -> str:
    return repr(float(v))


def _matrix_csv(header: list[str], arrays: list[np.ndarray]) -> list[list[str]]:
    rows = [header]
    mat = np.hstack(arrays)
    for row in mat:
        rows.append([_float_cell(v) for v in row])
    return rows


# ---------------------------------------------------------------------------
# Command runners


def _planted_from_config(cfg: dict):
    spec = KernelSpec(cfg["kernel_kind"], cfg["kernel_dim"], cfg["R2"])
    return planted_bias_instance(
        spec,
        context_dim=cfg["context_dim"],
        support_size=cfg["support_size"],
        shift_norm=cfg["shift_norm"],
        seed=cfg["instance_seed"],
        context_kind=cfg["context_kind"],
    )


def run_calibrate_command(doc: dict, rd: RunDir, seed_override: int | None) -> tuple[int, dict]:
    cfg = parse_config(doc, CALIBRATE_SCHEMA)
    if seed_override is not None:
        cfg["seed"] = seed_override
    inst = _planted_from_config(cfg)
    cc = CalibConfig(
        epsilon=cfg["epsilon"],
        beta=cfg["beta"],
        R1=cfg["R1"],
        R2=cfg["R2"],
        n_actions=cfg["n_actions"],
        algorithm=cfg["algorithm"],
        eta=cfg["eta"],
        max_iters=cfg["max_iters"],
        audit_batch_size=cfg["audit_batch_size"],
        pool_size=cfg["pool_size"],
        heldout_size=cfg["heldout_size"],
        seed=cfg["seed"],
    )
    cfg.update({"eta": cc.eta, "max_iters": cc.max_iters, "ridge_lambda": RIDGE_LAMBDA})
    calibrated, trace = run_calibration(inst.predictor, inst.source(cfg["seed"]), cc)

    rd.write_csv("trace.csv", trace.to_csv_rows())
    summary = trace.to_doc()
    del summary["iterations"]
    summary.update(
        {
            "n_iterations": len(trace.iterations),
            "gate_passed": trace.terminal == "calibrated",
            "planted_shift_norm": inst.shift_norm,
            "heldout_potential_slack": hoeffding_halfwidth(
                4.0 * cfg["R2"] ** 2, cfg["heldout_size"], HELDOUT_DELTA
            ),
        }
    )
    rd.write_json("summary.json", summary)
    rd.write_json("predictor.json", predictor_to_doc(calibrated))
    if trace.terminal == "error":
        return 3, cfg
    return (0 if trace.terminal == "calibrated" else 1), cfg


def audit_report_doc(report: AuditReport, approx_offset: float) -> dict:
    """The report document schema for audit outcomes.

    decce_adjusted folds a declared representation-error offset into the
    estimate, for loss classes only approximately inside the span.
    """
    return {
        "found": report.found,
        "empirical_gap": report.empirical_gap,
        "threshold": report.threshold,
        "n_used": report.n_used,
        "candidate_pool_size": report.candidate_pool_size,
        "witness_loss_id": report.witness_loss.loss_id if report.witness_loss else None,
        "witness_lossprime_id": (
            report.witness_lossprime.loss_id if report.witness_lossprime else None
        ),
        "approx_offset": approx_offset,
        "decce_adjusted": report.empirical_gap + approx_offset,
    }


def run_audit_command(doc: dict, rd: RunDir, seed_override: int | None) -> tuple[int, dict]:
    cfg = parse_config(doc, AUDIT_SCHEMA)
    if seed_override is not None:
        cfg["seed"] = seed_override
    inst = _planted_from_config(cfg)
    batch = inst.source(cfg["seed"]).take(cfg["n"])
    pool = random_loss_pool(
        inst.kernel,
        batch.Y,
        cfg["n_actions"],
        cfg["R1"],
        cfg["pool_size"],
        np.random.default_rng(cfg["seed"] + 1),
    )
    report = audit(
        inst.predictor,
        batch,
        epsilon=cfg["epsilon"],
        pool=pool,
        beta=cfg["beta"],
        R1=cfg["R1"],
    )
    rd.write_json("report.json", audit_report_doc(report, cfg["approx_offset"]))
    if report.found and report.witness_loss is not None:
        rd.write_json(
            "witness_loss.json",
            {"kernel": kernel_to_doc(inst.kernel), "loss": loss_to_doc(report.witness_loss)},
        )
    return 0, cfg


def run_synth_command(doc: dict, rd: RunDir, seed_override: int | None) -> tuple[int, dict]:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    instance = doc.get("instance")
    if instance == "lower_bound":
        cfg = parse_config(doc, SYNTH_LOWER_SCHEMA)
        if seed_override is not None:
            cfg["seed"] = seed_override
        inst = gen_lower_bound(cfg["d"], cfg["epsilon"], cfg["n"], cfg["world"], cfg["seed"])
        d = cfg["d"]
        header = [f"p{i}" for i in range(d)] + [f"y{i}" for i in range(d)]
        rd.write_csv("dataset.csv", _matrix_csv(header, [inst.predictions, inst.outcomes]))
        if inst.sigma is not None:
            rd.write_csv(
                "sigma.csv",
                [[f"s{i}" for i in range(d)], [_float_cell(v) for v in inst.sigma]],
            )
        return 0, cfg
    cfg = parse_config(doc, SYNTH_PLANTED_SCHEMA)
    if seed_override is not None:
        cfg["seed"] = seed_override
    inst = _planted_from_config(cfg)
    batch = inst.source(cfg["seed"]).take(cfg["n"])
    header = [f"x{i}" for i in range(batch.X.shape[1])] + [
        f"y{i}" for i in range(batch.Y.shape[1])
    ]
    rd.write_csv("dataset.csv", _matrix_csv(header, [batch.X, batch.Y]))
    return 0, cfg


def _run_regret(cfg: dict) -> ExperimentResult:
    spec = KernelSpec("min", 1, cfg["R2"])
    inst = planted_bias_instance(
        spec, context_dim=2, support_size=24,
        shift_norm=cfg["shift_norm"], seed=cfg["seed"] + 17,
    )
    pool_batch = inst.source(cfg["seed"] + 5).take(512)
    losses = random_loss_pool(
        spec, pool_batch.Y, cfg["n_actions"], cfg["R1"], cfg["loss_count"],
        np.random.default_rng(cfg["seed"] + 3), id_prefix="regret",
    )
    cc = CalibConfig(
        epsilon=cfg["epsilon"], beta=cfg["beta"], R1=cfg["R1"], R2=cfg["R2"],
        n_actions=cfg["n_actions"], algorithm=cfg["algorithm"],
        audit_batch_size=cfg["audit_batch_size"], pool_size=cfg["pool_size"],
        heldout_size=cfg["heldout_size"], seed=cfg["seed"],
    )
    calibrated, trace = run_calibration(
        inst.predictor, inst.source(cfg["seed"]), cc, user_losses=losses
    )
    batch = inst.source(cfg["seed"] + 9).take(cfg["regret_batch_size"])
    result = regret_experiment(
        calibrated, list(losses), batch,
        epsilon=cfg["epsilon"], beta=cfg["beta"], R1=cfg["R1"], R2=cfg["R2"],
    )
    result.notes["calibration_terminal"] = trace.terminal
    result.notes["calibration_iterations"] = len(trace.iterations)
    result.passed = result.passed and trace.terminal == "calibrated"
    return result


def run_experiment_command(doc: dict, rd: RunDir, seed_override: int | None) -> tuple[int, dict]:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    name = doc.get("experiment")
    if name not in EXPERIMENT_SCHEMAS:
        raise ConfigError(
            f"config key 'experiment': must be one of {sorted(EXPERIMENT_SCHEMAS)}"
        )
    cfg = parse_config(doc, EXPERIMENT_SCHEMAS[name])
    if seed_override is not None:
        cfg["seed"] = seed_override
    if name == "convergence":
        cells = [
            {
                "epsilon": e,
                "beta": cfg["beta"],
                "R1": cfg["R1"],
                "R2": cfg["R2"],
                "shift_norm": cfg["shift_norm"],
                "n_actions": cfg["n_actions"],
                "audit_batch_size": cfg["audit_batch_size"],
                "heldout_size": cfg["heldout_size"],
            }
            for e in cfg["epsilons"]
        ]
        result = convergence_experiment(cells, seed=cfg["seed"])
    elif name == "uniform_convergence":
        result = uniform_convergence_experiment(
            cfg["n_grid"],
            pool_size=cfg["pool_size"],
            reference_n=cfg["reference_n"],
            resamples=cfg["resamples"],
            seed=cfg["seed"],
            beta=cfg["beta"],
            R1=cfg["R1"],
        )
    elif name == "regret":
        result = _run_regret(cfg)
    elif name == "distinguishing":
        result = distinguishing_experiment(
            cfg["d_grid"],
            cfg["n_grid"],
            epsilon=cfg["epsilon"],
            trials=cfg["trials"],
            seed=cfg["seed"],
            decce_samples=cfg["decce_samples"],
        )
    else:
        result = sample_complexity_sweep(
            cfg["eps_grid"],
            seed=cfg["seed"],
            shift_norm=cfg["shift_norm"],
            beta=cfg["beta"],
            n_actions=cfg["n_actions"],
        )
    rd.write_json("results.json", result.to_doc())
    rd.write_csv("results.csv", result.to_csv_rows())
    return (0 if result.passed else 1), cfg


def run_report_command(doc: dict, rd: RunDir, seed_override: int | None) -> tuple[int, dict]:
    cfg = parse_config(doc, REPORT_SCHEMA)
    run_dir = Path(cfg["run_dir"])
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"config key 'run_dir': no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    digest: dict = {
        "source_command": manifest.get("command"),
        "source_config": manifest.get("config"),
        "source_outputs": manifest.get("outputs"),
        "metrics": {},
    }
    summary_path = run_dir / "summary.json"
    if summary_path.is_file():
        s = json.loads(summary_path.read_text())
        digest["metrics"]["calibration"] = {
            k: s.get(k)
            for k in ("terminal", "final_gap", "final_heldout_decce", "gate_passed")
        }
    results_path = run_dir / "results.json"
    if results_path.is_file():
        r = json.loads(results_path.read_text())
        digest["metrics"]["experiment"] = {
            "experiment": r.get("experiment"),
            "passed": r.get("passed"),
            "fits": r.get("fits"),
            "notes": r.get("notes"),
        }
    audit_path = run_dir / "report.json"
    if audit_path.is_file():
        a = json.loads(audit_path.read_text())
        digest["metrics"]["audit"] = {
            k: a.get(k) for k in ("found", "empirical_gap", "decce_adjusted")
        }
    rd.write_json("report.json", digest)
    return 0, cfg


COMMANDS: dict[str, Callable] = {
    "calibrate": run_calibrate_command,
    "audit": run_audit_command,
    "synth": run_synth_command,
    "experiment": run_experiment_command,
    "report": run_report_command,
}


# ---------------------------------------------------------------------------
# Entry point


def _set_thread_budget(n: int) -> None:
    """Best-effort global thread cap: library code is single-threaded by
    design, so this constrains BLAS pools only."""
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decal",
        description="Decision-calibration toolkit: calibrate, audit, synth, experiment, report.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a flat JSON config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="global thread budget")
    parser.add_argument("--quiet", action="store_true", help="suppress the closing summary line")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return 2
    _set_thread_budget(args.threads)
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    rd = RunDir(Path(args.out), args.quiet)
    try:
        code, resolved = COMMANDS[args.command](raw, rd, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the contract maps these to exit 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    rd.finish(args.command, resolved, args.threads)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
