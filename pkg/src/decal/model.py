"""Loss functions, predictors, and decision rules over kernel spans.

A predictor is a base coefficient map plus an ordered chain of calibration
patches.  Evaluation replays the chain: each patch recomputes the smooth
decision rule of its recorded witness loss against the element built so far,
adds the recorded per-action adjustments weighted by that rule, and projects
back onto the radius-R2 ball.  All of this happens on coefficient vectors
over one shared anchor list, so a batch of contexts is one pass of matrix
algebra.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np
from scipy.special import softmax

from .kernel import (
    KernelSpec,
    RkhsElement,
    as_outcomes,
    compress,
    norm,
)

DEGENERATE_NORM = 1e-12


def as_contexts(X) -> np.ndarray:
    """Coerce a context or batch of contexts into an (m, dx) float array."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"contexts must be at most 2-d, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Paired contexts and outcomes drawn from one distribution."""

    X: np.ndarray  # (n, dx)
    Y: np.ndarray  # (n, dim)
    batch_id: str = ""

    def __post_init__(self) -> None:
        X = as_contexts(self.X).copy()
        Y = np.asarray(self.Y, dtype=np.float64).copy()
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if len(X) != len(Y):
            raise ValueError("context and outcome counts differ")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    def __len__(self) -> int:
        return len(self.X)


# ---------------------------------------------------------------------------
# Decision rules


def smooth_best_response(fvals, beta: float) -> np.ndarray:
    """Quantal response exp(-beta * f_a) / sum_b exp(-beta * f_b).

    Operates on the last axis; beta = 0 gives the uniform distribution.
    Overflow-safe via max subtraction inside scipy's softmax.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    f = np.asarray(fvals, dtype=np.float64)
    return softmax(-beta * f, axis=-1)


def deterministic_best_response(fvals) -> int:
    """Index of the smallest estimated loss; ties go to the lowest index."""
    f = np.asarray(fvals, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("fvals must be a nonempty vector")
    return int(np.argmin(f))


@dataclass(frozen=True)
class DecisionRuleConfig:
    """How an agent turns estimated losses into an action."""

    mode: str = "smooth"  # "smooth" | "deterministic"
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("smooth", "deterministic"):
            raise ValueError(f"unknown decision rule mode {self.mode!r}")
        if self.mode == "smooth" and not self.beta >= 0:
            raise ValueError("smooth rules need beta >= 0")

    def action_distribution(self, fvals) -> np.ndarray:
        if self.mode == "smooth":
            return smooth_best_response(fvals, self.beta)
        out = np.zeros(len(fvals))
        out[deterministic_best_response(fvals)] = 1.0
        return out


# ---------------------------------------------------------------------------
# Loss functions


@dataclass(frozen=True)
class LossFunction:
    """Per-action RKHS coefficients r(a); the loss value is <r(a), phi(y)>.

    Construct through make_loss, which enforces the norm bound R1 by
    rescaling any over-bound action coefficient down to norm R1 exactly
    (recorded in `rescaled`).
    """

    loss_id: str
    coefficients: tuple[RkhsElement, ...]
    R1: float
    rescaled: bool = False

    def __post_init__(self) -> None:
        if not self.coefficients:
            raise ValueError("a loss needs at least one action")
        spec = self.coefficients[0].spec
        for el in self.coefficients:
            if el.spec != spec:
                raise ValueError("all action coefficients must share one kernel")
        if not self.R1 > 0:
            raise ValueError("R1 must be positive")

    @property
    def spec(self) -> KernelSpec:
        return self.coefficients[0].spec

    @property
    def n_actions(self) -> int:
        return len(self.coefficients)

    def norms(self) -> np.ndarray:
        return np.array([norm(el) for el in self.coefficients])

    def values(self, Y) -> np.ndarray:
        """Loss matrix ell(a, y_i), shape (n, n_actions)."""
        spec = self.spec
        Ym = as_outcomes(Y, spec.dim)
        cols = []
        for el in self.coefficients:
            if len(el) == 0:
                cols.append(np.zeros(len(Ym)))
            else:
                cols.append(spec.gram(Ym, el.anchors) @ el.coeffs)
        return np.column_stack(cols) if cols else np.zeros((len(Ym), 0))


def make_loss(loss_id: str, coefficients, R1: float) -> LossFunction:
    """Build a LossFunction, rescaling actions whose norm exceeds R1."""
    elements = []
    rescaled = False
    for el in coefficients:
        nv = norm(el)
        if nv > R1 * (1.0 + 1e-12):
            el = RkhsElement(el.spec, el.anchors, el.coeffs * (R1 / nv))
            rescaled = True
        elements.append(el)
    return LossFunction(loss_id, tuple(elements), R1, rescaled)


def loss_estimate_columns(spec: KernelSpec, anchors: np.ndarray, loss: LossFunction) -> np.ndarray:
    """Columns u_a with <r(a), sum_j w_j phi(anchors[j])> = w @ u_a; (N, |A|)."""
    cols = []
    for el in loss.coefficients:
        if len(el) == 0:
            cols.append(np.zeros(len(anchors)))
        else:
            cols.append(spec.gram(anchors, el.anchors) @ el.coeffs)
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Predictor bases

_BASE_REGISTRY: dict[str, type] = {}


def register_base(cls):
    _BASE_REGISTRY[cls.kind] = cls
    return cls


class PredictorBase:
    """Maps contexts to coefficient vectors over a fixed anchor set."""

    kind: ClassVar[str]
    anchors: np.ndarray

    def weights(self, X: np.ndarray) -> np.ndarray:  # (m, n_anchors)
        raise NotImplementedError

    def to_doc(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_doc(cls, doc: dict, spec: KernelSpec) -> "PredictorBase":
        raise NotImplementedError


@register_base
@dataclass(frozen=True)
class ConstantBase(PredictorBase):
    """Context-independent element, e.g. the feature mean of a training batch."""

    kind: ClassVar[str] = "constant"
    element: RkhsElement

    @property
    def anchors(self) -> np.ndarray:
        return self.element.anchors

    def weights(self, X: np.ndarray) -> np.ndarray:
        return np.tile(self.element.coeffs, (len(X), 1))

    def to_doc(self) -> dict:
        return {"kind": self.kind, "element": element_to_doc(self.element)}

    @classmethod
    def from_doc(cls, doc: dict, spec: KernelSpec) -> "ConstantBase":
        return cls(element_from_doc(doc["element"], spec))


def constant_mean_base(spec: KernelSpec, Y) -> ConstantBase:
    """Feature mean of the outcomes Y, with duplicate anchors merged."""
    Ym = as_outcomes(Y, spec.dim)
    el = RkhsElement(spec, Ym, np.full(len(Ym), 1.0 / len(Ym)))
    return ConstantBase(compress(el))


@register_base
@dataclass(frozen=True, eq=False)
class SimilarityBase(PredictorBase):
    """Similarity-weighted average of training outcomes.

    Weights are a Gaussian context kernel normalized over the training set,
    so the prediction at x is a convex combination of phi(train outcome).
    """

    kind: ClassVar[str] = "similarity"
    spec: KernelSpec
    anchors: np.ndarray  # training outcomes (N, dim)
    contexts: np.ndarray  # training contexts (N, dx)
    bandwidth: float

    def __post_init__(self) -> None:
        anchors = as_outcomes(self.anchors, self.spec.dim).copy()
        contexts = as_contexts(self.contexts).copy()
        if len(anchors) != len(contexts):
            raise ValueError("anchor and context counts differ")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.spec.check_domain(anchors)
        anchors.setflags(write=False)
        contexts.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "contexts", contexts)

    def weights(self, X: np.ndarray) -> np.ndarray:
        d2 = (
            np.einsum("ij,ij->i", X, X)[:, None]
            + np.einsum("ij,ij->i", self.contexts, self.contexts)[None, :]
            - 2.0 * X @ self.contexts.T
        )
        logw = -d2 / (2.0 * self.bandwidth**2)
        return softmax(logw, axis=1)

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "anchors": self.anchors.tolist(),
            "contexts": self.contexts.tolist(),
            "bandwidth": self.bandwidth,
        }

    @classmethod
    def from_doc(cls, doc: dict, spec: KernelSpec) -> "SimilarityBase":
        return cls(
            spec,
            np.asarray(doc["anchors"], dtype=np.float64),
            np.asarray(doc["contexts"], dtype=np.float64),
            float(doc["bandwidth"]),
        )


# ---------------------------------------------------------------------------
# Patches


@dataclass(frozen=True, eq=False)
class PatchRecord:
    """One calibration round: the witness decision loss, the rule temperature
    used when the patch was laid down, and the per-action update data.

    algorithm "alg1": adjustments[a] has norm eta * R1 (or is zero when the
    audited residual direction was degenerate); the update at x is
    sum_a adjustments[a] * ruleprob_a(x).

    algorithm "alg2": residual_rows[a] is the raw per-action residual mean
    and mixing is (Dhat + I)^-1; the update at x is
    sum_a (mixing @ ruleprob(x))_a * residual_rows[a].
    """

    algorithm: str
    witness_lossprime: LossFunction
    beta: float
    batch_id: str = ""
    eta: float | None = None
    adjustments: tuple[RkhsElement, ...] = ()
    mixing: np.ndarray | None = None
    residual_rows: tuple[RkhsElement, ...] = ()

    def __post_init__(self) -> None:
        if self.algorithm not in ("alg1", "alg2"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        n_act = self.witness_lossprime.n_actions
        if self.algorithm == "alg1":
            if self.eta is None or not self.eta > 0:
                raise ValueError("alg1 patches need eta > 0")
            if len(self.adjustments) != n_act:
                raise ValueError("one adjustment per action required")
        else:
            if self.mixing is None:
                raise ValueError("alg2 patches need the mixing matrix")
            mixing = np.asarray(self.mixing, dtype=np.float64).copy()
            if mixing.shape != (n_act, n_act):
                raise ValueError("mixing matrix must be (|A|, |A|)")
            mixing.setflags(write=False)
            object.__setattr__(self, "mixing", mixing)
            if len(self.residual_rows) != n_act:
                raise ValueError("one residual row per action required")


@dataclass(frozen=True)
class _PlanStep:
    kind: str
    n_before: int
    n_after: int
    beta: float
    V: np.ndarray  # (n_before, |A|) loss-estimate columns of the witness
    D: np.ndarray | None = None  # alg1: (|A|, n_after) adjustment rows
    M: np.ndarray | None = None  # alg2 mixing
    R: np.ndarray | None = None  # alg2: (|A|, n_after) residual rows


class _EvalPlan:
    """Patch chain aligned onto one shared anchor matrix."""

    def __init__(self, predictor: "Predictor") -> None:
        spec = predictor.kernel
        base_anchors = as_outcomes(predictor.base.anchors, spec.dim)
        rows: list[np.ndarray] = list(base_anchors)
        index: dict[bytes, int] = {}
        for i, row in enumerate(rows):
            index.setdefault(row.tobytes(), i)

        def align(element: RkhsElement) -> list[tuple[int, float]]:
            entries = []
            for anchor, c in zip(element.anchors, element.coeffs):
                key = anchor.tobytes()
                j = index.get(key)
                if j is None:
                    j = len(rows)
                    index[key] = j
                    rows.append(anchor)
                entries.append((j, float(c)))
            return entries

        steps: list[_PlanStep] = []
        for rec in predictor.patches:
            n_before = len(rows)
            prefix = np.vstack(rows) if rows else np.zeros((0, spec.dim))
            V = loss_estimate_columns(spec, prefix, rec.witness_lossprime)
            if rec.algorithm == "alg1":
                per_action = [align(el) for el in rec.adjustments]
            else:
                per_action = [align(el) for el in rec.residual_rows]
            n_after = len(rows)
            mat = np.zeros((len(per_action), n_after))
            for a, entries in enumerate(per_action):
                for j, c in entries:
                    mat[a, j] += c
            if rec.algorithm == "alg1":
                steps.append(_PlanStep("alg1", n_before, n_after, rec.beta, V, D=mat))
            else:
                steps.append(
                    _PlanStep("alg2", n_before, n_after, rec.beta, V, M=rec.mixing, R=mat)
                )

        self.spec = spec
        self.anchors = np.vstack(rows) if rows else np.zeros((0, spec.dim))
        self.anchors.setflags(write=False)
        self.n_base = len(base_anchors)
        self.n_total = len(rows)
        self.steps = steps
        self._gram: np.ndarray | None = None

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.spec.gram(self.anchors, self.anchors)
        return self._gram


def _project_rows(W: np.ndarray, G: np.ndarray, upto: int, R2: float) -> None:
    """Scale rows of W[:, :upto] with norm > R2 back onto the ball, in place."""
    sub = W[:, :upto]
    n2 = np.einsum("ij,ij->i", sub @ G[:upto, :upto], sub)
    over = n2 > R2 * R2
    if np.any(over):
        sub[over] *= (R2 / np.sqrt(n2[over]))[:, None]


@dataclass(frozen=True)
class Predictor:
    """Base coefficient map plus an ordered calibration patch chain."""

    kernel: KernelSpec
    base: PredictorBase
    patches: tuple[PatchRecord, ...] = ()

    @property
    def _plan(self) -> _EvalPlan:
        plan = self.__dict__.get("_plan_cache")
        if plan is None:
            plan = _EvalPlan(self)
            object.__setattr__(self, "_plan_cache", plan)
        return plan

    @property
    def anchors(self) -> np.ndarray:
        return self._plan.anchors

    def with_patch(self, record: PatchRecord) -> "Predictor":
        return Predictor(self.kernel, self.base, self.patches + (record,))

    def coefficients(self, X) -> np.ndarray:
        """Coefficient matrix of the predictions over self.anchors; (m, N).

        Replays the patch chain on the whole batch at once, projecting onto
        the R2 ball after the base map and after every patch.
        """
        plan = self._plan
        Xm = as_contexts(X)
        W = np.zeros((len(Xm), plan.n_total))
        W[:, : plan.n_base] = self.base.weights(Xm)
        G = plan.gram()
        R2 = self.kernel.R2
        _project_rows(W, G, plan.n_base, R2)
        for st in plan.steps:
            F = W[:, : st.n_before] @ st.V
            P = smooth_best_response(F, st.beta)
            if st.kind == "alg1":
                W[:, : st.n_after] += P @ st.D
            else:
                W[:, : st.n_after] += (P @ st.M) @ st.R
            _project_rows(W, G, st.n_after, R2)
        return W

    def evaluate(self, x) -> RkhsElement:
        """The predicted element at a single context."""
        W = self.coefficients(x)
        return RkhsElement(self.kernel, self._plan.anchors, W[0])


def evaluate_predictor(p: Predictor, x) -> RkhsElement:
    return p.evaluate(x)


def loss_estimates(p: Predictor, X, loss: LossFunction) -> np.ndarray:
    """Estimated losses f(x_i, a) = <r(a), p(x_i)>; shape (m, |A|)."""
    W = p.coefficients(X)
    cols = loss_estimate_columns(p.kernel, p.anchors, loss)
    return W @ cols


def loss_estimate(p: Predictor, x, a: int, loss: LossFunction) -> float:
    est = loss_estimates(p, x, loss)
    return float(est[0, a])


@dataclass(frozen=True, eq=False)
class EvaluatedBatch:
    """A batch pushed through a predictor once; reused by audit and patching."""

    kernel: KernelSpec
    X: np.ndarray
    Y: np.ndarray
    anchors: np.ndarray
    anchor_gram: np.ndarray
    W: np.ndarray
    batch_id: str = ""

    def __len__(self) -> int:
        return len(self.X)


def evaluate_batch(p: Predictor, batch: SampleBatch) -> EvaluatedBatch:
    plan = p._plan
    W = p.coefficients(batch.X)
    return EvaluatedBatch(
        p.kernel, batch.X, batch.Y, plan.anchors, plan.gram(), W, batch.batch_id
    )


# ---------------------------------------------------------------------------
# Serialization: structured JSON documents with exact float round-trip.


def kernel_to_doc(spec: KernelSpec) -> dict:
    return {"kind": spec.kind, "dim": spec.dim, "R2": spec.R2}


def kernel_from_doc(doc: dict) -> KernelSpec:
    return KernelSpec(doc["kind"], int(doc["dim"]), float(doc["R2"]))


def element_to_doc(el: RkhsElement) -> dict:
    return {"anchors": el.anchors.tolist(), "coeffs": el.coeffs.tolist()}


def element_from_doc(doc: dict, spec: KernelSpec) -> RkhsElement:
    anchors = np.asarray(doc["anchors"], dtype=np.float64).reshape(-1, spec.dim)
    return RkhsElement(spec, anchors, np.asarray(doc["coeffs"], dtype=np.float64))


def loss_to_doc(loss: LossFunction) -> dict:
    return {
        "loss_id": loss.loss_id,
        "R1": loss.R1,
        "rescaled": loss.rescaled,
        "coefficients": [element_to_doc(el) for el in loss.coefficients],
    }


def loss_from_doc(doc: dict, spec: KernelSpec) -> LossFunction:
    elements = tuple(element_from_doc(d, spec) for d in doc["coefficients"])
    return LossFunction(doc["loss_id"], elements, float(doc["R1"]), bool(doc["rescaled"]))


def base_to_doc(base: PredictorBase) -> dict:
    return base.to_doc()


def base_from_doc(doc: dict, spec: KernelSpec) -> PredictorBase:
    cls = _BASE_REGISTRY.get(doc["kind"])
    if cls is None:
        raise ValueError(f"unknown predictor base kind {doc['kind']!r}")
    return cls.from_doc(doc, spec)


def patch_to_doc(rec: PatchRecord) -> dict:
    doc = {
        "algorithm": rec.algorithm,
        "witness_lossprime": loss_to_doc(rec.witness_lossprime),
        "beta": rec.beta,
        "batch_id": rec.batch_id,
    }
    if rec.algorithm == "alg1":
        doc["eta"] = rec.eta
        doc["adjustments"] = [element_to_doc(el) for el in rec.adjustments]
    else:
        doc["mixing"] = rec.mixing.tolist()
        doc["residual_rows"] = [element_to_doc(el) for el in rec.residual_rows]
    return doc


def patch_from_doc(doc: dict, spec: KernelSpec) -> PatchRecord:
    lossprime = loss_from_doc(doc["witness_lossprime"], spec)
    if doc["algorithm"] == "alg1":
        return PatchRecord(
            "alg1",
            lossprime,
            float(doc["beta"]),
            doc["batch_id"],
            eta=float(doc["eta"]),
            adjustments=tuple(element_from_doc(d, spec) for d in doc["adjustments"]),
        )
    return PatchRecord(
        "alg2",
        lossprime,
        float(doc["beta"]),
        doc["batch_id"],
        mixing=np.asarray(doc["mixing"], dtype=np.float64),
        residual_rows=tuple(element_from_doc(d, spec) for d in doc["residual_rows"]),
    )


def predictor_to_doc(p: Predictor) -> dict:
    return {
        "kernel": kernel_to_doc(p.kernel),
        "base": base_to_doc(p.base),
        "patches": [patch_to_doc(rec) for rec in p.patches],
    }


def predictor_from_doc(doc: dict) -> Predictor:
    spec = kernel_from_doc(doc["kernel"])
    base = base_from_doc(doc["base"], spec)
    patches = tuple(patch_from_doc(d, spec) for d in doc["patches"])
    return Predictor(spec, base, patches)


def save_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_predictor(path, p: Predictor) -> None:
    save_json(path, predictor_to_doc(p))


def load_predictor(path) -> Predictor:
    return predictor_from_doc(load_json(path))


def save_loss(path, loss: LossFunction, spec: KernelSpec) -> None:
    save_json(path, {"kernel": kernel_to_doc(spec), "loss": loss_to_doc(loss)})


def load_loss(path) -> LossFunction:
    doc = load_json(path)
    return loss_from_doc(doc["loss"], kernel_from_doc(doc["kernel"]))
