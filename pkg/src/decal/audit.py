"""Decision-calibration auditing.

The audit statistic for a pair (loss, lossprime) is the empirical mean of
sum_a <r_loss(a), phi(y) - p(x)> * k_a(x), where k is the smooth best
response induced by lossprime's estimated losses.  For a fixed lossprime the
loss side has a closed-form maximizer over the R1 ball: each action
coefficient is the rescaled per-action residual mean.  Auditing therefore
scans a pool of candidate lossprimes and takes the best closed-form witness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import KernelSpec, RkhsElement, compress, span_gram, zero_element
from .model import (
    DEGENERATE_NORM,
    EvaluatedBatch,
    LossFunction,
    SampleBatch,
    evaluate_batch,
    loss_estimate_columns,
    make_loss,
    smooth_best_response,
)

AUDIT_THRESHOLD_FACTOR = 0.75  # audits fire at 3/4 of the calibration target


@dataclass(frozen=True)
class AuditReport:
    found: bool
    witness_loss: LossFunction | None
    witness_lossprime: LossFunction | None
    empirical_gap: float
    threshold: float
    n_used: int
    candidate_pool_size: int


def _as_evaluated(p_or_eb, batch: SampleBatch | None) -> EvaluatedBatch:
    if isinstance(p_or_eb, EvaluatedBatch):
        return p_or_eb
    if batch is None:
        raise ValueError("a batch is required when passing a Predictor")
    return evaluate_batch(p_or_eb, batch)


def rule_probabilities(eb: EvaluatedBatch, lossprime: LossFunction, beta: float) -> np.ndarray:
    """Smooth best-response probabilities on the batch; (n, |A|)."""
    cols = loss_estimate_columns(eb.kernel, eb.anchors, lossprime)
    return smooth_best_response(eb.W @ cols, beta)


def _residual_coeff_matrix(eb: EvaluatedBatch, B: np.ndarray) -> np.ndarray:
    """Coefficients of the weighted residual means over [Y; anchors].

    Column c of B weights the samples; the spanned element is
    (1/n) sum_i B[i, c] * (phi(y_i) - p(x_i)).
    """
    n = len(eb)
    return np.vstack([B / n, -(eb.W.T @ B) / n])


def residual_mean_gram(eb: EvaluatedBatch, B: np.ndarray) -> np.ndarray:
    """Pairwise inner products of weighted residual means; (k, k)."""
    C = _residual_coeff_matrix(eb, B)
    Z = np.vstack([eb.Y, eb.anchors])
    return span_gram(eb.kernel, Z, C)


def residual_mean_elements(eb: EvaluatedBatch, B: np.ndarray) -> tuple[RkhsElement, ...]:
    """The weighted residual means themselves, as compressed spans."""
    C = _residual_coeff_matrix(eb, B)
    Z = np.vstack([eb.Y, eb.anchors])
    return tuple(compress(RkhsElement(eb.kernel, Z, C[:, j])) for j in range(B.shape[1]))


def scaled_directions(
    elements, norms: np.ndarray, scale_to: float
) -> tuple[RkhsElement, ...]:
    """Each element rescaled to norm `scale_to`; degenerate inputs become zero."""
    out = []
    for el, nv in zip(elements, norms):
        if nv <= DEGENERATE_NORM:
            out.append(zero_element(el.spec))
        else:
            out.append(RkhsElement(el.spec, el.anchors, el.coeffs * (scale_to / nv)))
    return tuple(out)


def _gap_scan(eb: EvaluatedBatch, pool, beta: float, R1: float):
    """Witness-sup gap for every candidate lossprime in one Gram pass."""
    if not pool:
        raise ValueError("candidate pool must be nonempty")
    probs = [rule_probabilities(eb, lp, beta) for lp in pool]
    B = np.hstack(probs)
    gram = residual_mean_gram(eb, B)
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    norms = norms.reshape(len(pool), -1)
    effective = np.where(norms > DEGENERATE_NORM, norms, 0.0)
    gaps = R1 * effective.sum(axis=1)
    return gaps, norms, probs


def closed_form_witness(
    p_or_eb,
    lossprime: LossFunction,
    batch: SampleBatch | None = None,
    *,
    R1: float,
    beta: float,
    loss_id: str = "witness",
) -> LossFunction:
    """The gap-maximizing loss at norm bound R1 for a fixed lossprime.

    Accepts either a Predictor plus a batch, or an EvaluatedBatch directly.
    """
    eb = _as_evaluated(p_or_eb, batch)
    kprobs = rule_probabilities(eb, lossprime, beta)
    gram = residual_mean_gram(eb, kprobs)
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    elements = scaled_directions(residual_mean_elements(eb, kprobs), norms, R1)
    return make_loss(loss_id, elements, R1)


def empirical_gap(
    p_or_eb,
    loss: LossFunction,
    lossprime: LossFunction,
    batch: SampleBatch | None = None,
    *,
    beta: float,
) -> float:
    """|Ehat[ sum_a <r(a), phi(y) - p(x)> * k_a(x) ]| on the batch."""
    eb = _as_evaluated(p_or_eb, batch)
    kprobs = rule_probabilities(eb, lossprime, beta)
    vals = loss.values(eb.Y)
    ests = eb.W @ loss_estimate_columns(eb.kernel, eb.anchors, loss)
    return abs(float(np.mean(np.sum((vals - ests) * kprobs, axis=1))))


def audit(
    p_or_eb,
    batch: SampleBatch | None = None,
    *,
    epsilon: float,
    pool,
    beta: float,
    R1: float,
    witness_id: str = "witness",
) -> AuditReport:
    """Scan the pool for the best closed-form witness pair.

    found is True when the best gap exceeds 3 * epsilon / 4, in which case
    the report carries the maximizing (witness, lossprime) pair.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    eb = _as_evaluated(p_or_eb, batch)
    gaps, norms, probs = _gap_scan(eb, pool, beta, R1)
    best = int(np.argmax(gaps))
    elements = scaled_directions(
        residual_mean_elements(eb, probs[best]), norms[best], R1
    )
    witness = make_loss(witness_id, elements, R1)
    threshold = AUDIT_THRESHOLD_FACTOR * epsilon
    gap = float(gaps[best])
    return AuditReport(
        found=gap > threshold,
        witness_loss=witness,
        witness_lossprime=pool[best],
        empirical_gap=gap,
        threshold=threshold,
        n_used=len(eb),
        candidate_pool_size=len(pool),
    )


def decce_estimate(
    p_or_eb, batch: SampleBatch | None = None, *, pool, beta: float, R1: float
) -> float:
    """Best witness-sup gap over the pool: a lower bound on the true decCE."""
    eb = _as_evaluated(p_or_eb, batch)
    gaps, _, _ = _gap_scan(eb, pool, beta, R1)
    return float(np.max(gaps))


def random_loss_pool(
    spec: KernelSpec,
    Y: np.ndarray,
    n_actions: int,
    R1: float,
    size: int,
    rng: np.random.Generator,
    span: int = 8,
    id_prefix: str = "rand",
) -> list[LossFunction]:
    """Random candidate losses anchored on observed outcomes, each action
    coefficient normalized to norm R1 exactly.
    """
    n = len(Y)
    if n == 0:
        raise ValueError("need at least one outcome to anchor pool losses")
    pool = []
    for k in range(size):
        elements = []
        for _ in range(n_actions):
            take = min(span, n)
            idx = rng.choice(n, size=take, replace=False)
            coeffs = rng.standard_normal(take)
            el = compress(RkhsElement(spec, Y[idx], coeffs))
            nv = np.sqrt(max(span_gram(spec, el.anchors, el.coeffs[:, None])[0, 0], 0.0))
            if nv <= DEGENERATE_NORM:
                elements.append(zero_element(spec))
            else:
                elements.append(RkhsElement(spec, el.anchors, el.coeffs * (R1 / nv)))
        pool.append(LossFunction(f"{id_prefix}-{k:03d}", tuple(elements), R1))
    return pool
