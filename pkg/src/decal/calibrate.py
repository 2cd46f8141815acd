"""Iterative decision-calibration of a predictor.

Each round draws a fresh audit batch, scans a candidate pool for the best
closed-form witness, and if the witness gap exceeds 3 * epsilon / 4 appends
one patch to the predictor: either the fixed-step adjustment rule (alg1,
step size eta = epsilon / (2 R1^2)) or the regularized least-squares update
(alg2, ridge weight fixed at 1).  The squared distance between predictions
and outcome features acts as the potential; on every audit batch the alg1
patch decreases it by at least 2 * eta * gap - eta^2 * R1^2 before
projection, and projection never increases it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .audit import (
    AuditReport,
    audit,
    decce_estimate,
    random_loss_pool,
    residual_mean_elements,
    residual_mean_gram,
    rule_probabilities,
    scaled_directions,
)
from .kernel import RkhsElement, norm
from .model import (
    EvaluatedBatch,
    LossFunction,
    PatchRecord,
    Predictor,
    SampleBatch,
    evaluate_batch,
)

TRACE_COLUMNS = (
    "iter",
    "gap",
    "pot_before",
    "pot_after",
    "witness_id",
    "witness_prime_id",
    "batch_id",
)

# Confidence parameter for the held-out potential slack reported with a run.
HELDOUT_DELTA = 0.01


class DataExhaustedError(RuntimeError):
    """A sample source ran out before calibration finished."""


@dataclass(frozen=True)
class CalibConfig:
    """Run parameters; eta and max_iters default to the analysis constants
    eta = epsilon / (2 R1^2) and max_iters = ceil(16 R1^2 R2^2 / epsilon^2).
    """

    epsilon: float
    beta: float
    R1: float
    R2: float
    n_actions: int
    algorithm: str = "alg1"
    eta: float | None = None
    max_iters: int | None = None
    audit_batch_size: int = 192
    pool_size: int = 32
    heldout_size: int = 768
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (self.R1 > 0 and self.R2 > 0):
            raise ValueError("R1 and R2 must be positive")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if self.algorithm not in ("alg1", "alg2"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.eta is None:
            object.__setattr__(self, "eta", self.epsilon / (2.0 * self.R1**2))
        elif not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iters is None:
            cap = math.ceil(16.0 * self.R1**2 * self.R2**2 / self.epsilon**2)
            object.__setattr__(self, "max_iters", cap)
        elif self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("audit_batch_size", "pool_size", "heldout_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    gap: float
    pot_before: float
    pot_after: float
    witness_id: str
    witness_prime_id: str
    batch_id: str
    wall_ms: float  # in-memory timing only; deterministic outputs omit it


@dataclass
class CalibrationTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    terminal: str = "calibrated"  # calibrated | iteration_cap | error
    error: str = ""
    final_gap: float = float("nan")
    initial_heldout_potential: float = float("nan")
    final_heldout_potential: float = float("nan")
    final_heldout_decce: float = float("nan")
    heldout_size: int = 0

    def to_csv_rows(self) -> list[list]:
        rows = [list(TRACE_COLUMNS)]
        for r in self.iterations:
            rows.append(
                [
                    r.iteration,
                    repr(r.gap),
                    repr(r.pot_before),
                    repr(r.pot_after),
                    r.witness_id,
                    r.witness_prime_id,
                    r.batch_id,
                ]
            )
        return rows

    def to_doc(self) -> dict:
        return {
            "terminal": self.terminal,
            "error": self.error,
            "iterations": [
                {
                    "iter": r.iteration,
                    "gap": r.gap,
                    "pot_before": r.pot_before,
                    "pot_after": r.pot_after,
                    "witness_id": r.witness_id,
                    "witness_prime_id": r.witness_prime_id,
                    "batch_id": r.batch_id,
                }
                for r in self.iterations
            ],
            "final_gap": self.final_gap,
            "initial_heldout_potential": self.initial_heldout_potential,
            "final_heldout_potential": self.final_heldout_potential,
            "final_heldout_decce": self.final_heldout_decce,
            "heldout_size": self.heldout_size,
        }


def project(v: RkhsElement, R2: float) -> RkhsElement:
    """Metric projection onto the radius-R2 ball: rescale iff the norm exceeds R2."""
    nv = norm(v)
    if nv <= R2:
        return v
    return RkhsElement(v.spec, v.anchors, v.coeffs * (R2 / nv))


def _potential_eb(eb: EvaluatedBatch) -> float:
    """Ehat[ ||phi(y) - p(x)||^2 ] on an evaluated batch."""
    spec = eb.kernel
    dk = spec.diag(eb.Y)
    cross = spec.gram(eb.Y, eb.anchors)
    inner_py = np.einsum("ij,ij->i", eb.W, cross)
    pnorm2 = np.einsum("ij,ij->i", eb.W @ eb.anchor_gram, eb.W)
    return float(np.mean(dk - 2.0 * inner_py + pnorm2))


def potential(p: Predictor, batch: SampleBatch) -> float:
    """Mean squared feature-space distance between predictions and outcomes."""
    return _potential_eb(evaluate_batch(p, batch))


def alg1_step(
    p_or_eb,
    report: AuditReport,
    batch: SampleBatch | None = None,
    *,
    config: CalibConfig,
) -> PatchRecord:
    """Fixed-step patch: each action's adjustment is the audited residual
    mean rescaled to norm eta * R1 (zero for degenerate directions).
    """
    if not report.found:
        raise ValueError("alg1_step requires a report with found=True")
    eb = p_or_eb if isinstance(p_or_eb, EvaluatedBatch) else evaluate_batch(p_or_eb, batch)
    lossprime = report.witness_lossprime
    kprobs = rule_probabilities(eb, lossprime, config.beta)
    gram = residual_mean_gram(eb, kprobs)
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    adjustments = scaled_directions(
        residual_mean_elements(eb, kprobs), norms, config.eta * config.R1
    )
    return PatchRecord(
        "alg1",
        lossprime,
        config.beta,
        batch_id=eb.batch_id,
        eta=config.eta,
        adjustments=adjustments,
    )


def alg2_step(
    p_or_eb,
    lossprime: LossFunction,
    batch: SampleBatch | None = None,
    *,
    config: CalibConfig,
) -> PatchRecord:
    """Regularized least-squares patch.

    Dhat[a, b] = Ehat[k_a k_b], mixing = (Dhat + I)^-1, and the stored rows
    are the raw per-action residual means; the replayed update at x is
    rows^T @ mixing @ k(x).
    """
    eb = p_or_eb if isinstance(p_or_eb, EvaluatedBatch) else evaluate_batch(p_or_eb, batch)
    kprobs = rule_probabilities(eb, lossprime, config.beta)
    n_act = kprobs.shape[1]
    dhat = (kprobs.T @ kprobs) / len(eb)
    mixing = np.linalg.inv(dhat + np.eye(n_act))
    mixing = (mixing + mixing.T) / 2.0  # keep the inverse exactly symmetric
    rows = residual_mean_elements(eb, kprobs)
    return PatchRecord(
        "alg2",
        lossprime,
        config.beta,
        batch_id=eb.batch_id,
        mixing=mixing,
        residual_rows=rows,
    )


def _dedup_losses(losses) -> list[LossFunction]:
    seen: set[str] = set()
    out = []
    for l in losses:
        if l.loss_id not in seen:
            seen.add(l.loss_id)
            out.append(l)
    return out


def run_calibration(
    p0: Predictor,
    source,
    config: CalibConfig,
    user_losses=(),
) -> tuple[Predictor, CalibrationTrace]:
    """Audit-and-patch until no witness crosses the threshold.

    `source.take(n)` must yield a fresh SampleBatch per call (sample
    splitting); a held-out batch is drawn first and scored before and after.
    Candidate pools are re-seeded per iteration from config.seed and carry
    every previously found witness plus any user-registered losses.
    """
    trace = CalibrationTrace()
    seeds = np.random.SeedSequence(config.seed).spawn(config.max_iters + 1)
    try:
        heldout = source.take(config.heldout_size)
    except DataExhaustedError as exc:
        trace.terminal = "error"
        trace.error = str(exc)
        return p0, trace
    trace.heldout_size = len(heldout)
    trace.initial_heldout_potential = potential(p0, heldout)

    p = p0
    witnesses: list[LossFunction] = []
    trace.terminal = "iteration_cap"
    for t in range(config.max_iters):
        started = time.perf_counter()
        try:
            batch = source.take(config.audit_batch_size)
        except DataExhaustedError as exc:
            trace.terminal = "error"
            trace.error = str(exc)
            break
        rng = np.random.default_rng(seeds[t])
        pool = _dedup_losses(
            random_loss_pool(
                p.kernel, batch.Y, config.n_actions, config.R1, config.pool_size, rng
            )
            + witnesses
            + list(user_losses)
        )
        eb = evaluate_batch(p, batch)
        report = audit(
            eb,
            epsilon=config.epsilon,
            pool=pool,
            beta=config.beta,
            R1=config.R1,
            witness_id=f"it{t:03d}-star",
        )
        if not report.found:
            trace.terminal = "calibrated"
            trace.final_gap = report.empirical_gap
            break
        pot_before = _potential_eb(eb)
        if config.algorithm == "alg1":
            rec = alg1_step(eb, report, config=config)
        else:
            rec = alg2_step(eb, report.witness_lossprime, config=config)
        p_next = p.with_patch(rec)
        pot_after = potential(p_next, batch)
        trace.iterations.append(
            IterationRecord(
                iteration=t,
                gap=report.empirical_gap,
                pot_before=pot_before,
                pot_after=pot_after,
                witness_id=report.witness_loss.loss_id,
                witness_prime_id=report.witness_lossprime.loss_id,
                batch_id=batch.batch_id,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )
        witnesses = _dedup_losses(witnesses + [report.witness_loss, report.witness_lossprime])
        p = p_next

    heldout_rng = np.random.default_rng(seeds[-1])
    heldout_pool = _dedup_losses(
        random_loss_pool(
            p.kernel, heldout.Y, config.n_actions, config.R1, config.pool_size, heldout_rng
        )
        + witnesses
        + list(user_losses)
    )
    heldout_eb = evaluate_batch(p, heldout)
    trace.final_heldout_potential = _potential_eb(heldout_eb)
    trace.final_heldout_decce = decce_estimate(
        heldout_eb, pool=heldout_pool, beta=config.beta, R1=config.R1
    )
    return p, trace
