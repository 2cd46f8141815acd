"""Kernels and exact arithmetic on finite feature-map spans.

Every object downstream (predictors, losses, calibration patches) is a finite
span ``sum_i c_i * phi(y_i)``, so inner products, norms, and projections all
reduce to Gram matrices over the anchor outcomes.  Coordinates of the feature
space are never materialized; the kernels below are the only place the
geometry enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KERNEL_KINDS = ("linear", "min", "exp")

# Anchors this far outside the declared domain are rejected.
DOMAIN_SLACK = 1e-9


class KernelMismatchError(ValueError):
    """Spans built over different kernel specs were combined."""


class OutcomeDomainError(ValueError):
    """An outcome lies outside the kernel's declared domain."""


@dataclass(frozen=True)
class KernelSpec:
    """A named kernel together with the feature-norm bound R2.

    kind "linear":  K(u, v) = <u, v> on the ball ||y|| <= R2 of R^dim.
    kind "min":     K(u, v) = min(u, v) on [0, 1]; dim is fixed to 1.
    kind "exp":     K(u, v) = exp(<u, v>) on the ball ||y|| <= sqrt(2 ln R2).

    Each domain is chosen so that K(y, y) <= R2**2, i.e. feature vectors
    never leave the radius-R2 Hilbert ball.
    """

    kind: str
    dim: int
    R2: float

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("kernel dim must be >= 1")
        if self.kind == "min" and self.dim != 1:
            raise ValueError("min kernel is defined on scalars; dim must be 1")
        if not (math.isfinite(self.R2) and self.R2 > 0):
            raise ValueError("R2 must be finite and positive")
        if self.kind == "min" and self.R2 < 1.0:
            raise ValueError("min kernel has K(1, 1) = 1; R2 must be >= 1")
        if self.kind == "exp" and self.R2 < 1.0:
            raise ValueError("exp kernel needs R2 >= 1 for a nonempty domain")

    @property
    def domain_radius(self) -> float:
        """Radius of the Euclidean ball of admissible outcomes."""
        if self.kind == "linear":
            return self.R2
        if self.kind == "exp":
            return math.sqrt(2.0 * math.log(self.R2))
        return 1.0  # min kernel: upper end of [0, 1]

    def check_domain(self, Y: np.ndarray) -> None:
        """Raise OutcomeDomainError unless every row of Y is admissible."""
        Y = as_outcomes(Y, self.dim)
        if Y.size == 0:
            return
        if not np.all(np.isfinite(Y)):
            raise OutcomeDomainError("outcomes must be finite")
        if self.kind == "min":
            lo, hi = Y.min(), Y.max()
            if lo < -DOMAIN_SLACK or hi > 1.0 + DOMAIN_SLACK:
                raise OutcomeDomainError(
                    f"min-kernel outcomes must lie in [0, 1]; saw [{lo}, {hi}]"
                )
        else:
            r = math.sqrt(float(np.max(np.einsum("ij,ij->i", Y, Y))))
            if r > self.domain_radius + DOMAIN_SLACK:
                raise OutcomeDomainError(
                    f"outcome norm {r} exceeds domain radius {self.domain_radius}"
                )

    def gram(self, Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
        """Cross-Gram matrix K(Y1[i], Y2[j]); inputs are (n, dim) arrays."""
        if self.kind == "linear":
            return Y1 @ Y2.T
        if self.kind == "min":
            return np.minimum(Y1, Y2.T)
        return np.exp(Y1 @ Y2.T)

    def diag(self, Y: np.ndarray) -> np.ndarray:
        """K(y, y) for each row of Y."""
        if self.kind == "linear":
            return np.einsum("ij,ij->i", Y, Y)
        if self.kind == "min":
            return Y[:, 0].copy()
        return np.exp(np.einsum("ij,ij->i", Y, Y))


def as_outcomes(Y, dim: int) -> np.ndarray:
    """Coerce scalars / vectors / row-stacks into an (n, dim) float array."""
    arr = np.asarray(Y, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected outcomes of dimension {dim}, got shape {arr.shape}")
    return arr


def eval_kernel(spec: KernelSpec, y1, y2) -> float:
    """K(y1, y2) for a single admissible pair."""
    a = as_outcomes(y1, spec.dim)
    b = as_outcomes(y2, spec.dim)
    spec.check_domain(a)
    spec.check_domain(b)
    return float(spec.gram(a, b)[0, 0])


@dataclass(frozen=True, eq=False)
class RkhsElement:
    """Immutable finite span sum_i coeffs[i] * phi(anchors[i])."""

    spec: KernelSpec
    anchors: np.ndarray  # (n, dim)
    coeffs: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        anchors = as_outcomes(self.anchors, self.spec.dim).copy()
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1).copy()
        if len(anchors) != len(coeffs):
            raise ValueError("anchor and coefficient counts differ")
        if coeffs.size and not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        self.spec.check_domain(anchors)
        anchors.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return len(self.coeffs)


def zero_element(spec: KernelSpec) -> RkhsElement:
    return RkhsElement(spec, np.zeros((0, spec.dim)), np.zeros(0))


def feature(spec: KernelSpec, y) -> RkhsElement:
    """The single feature map phi(y)."""
    return RkhsElement(spec, as_outcomes(y, spec.dim), np.ones(1))


def _check_same_spec(u: RkhsElement, v: RkhsElement) -> None:
    if u.spec != v.spec:
        raise KernelMismatchError(f"kernel specs differ: {u.spec} vs {v.spec}")


def inner(u: RkhsElement, v: RkhsElement) -> float:
    """<u, v> via the cross-Gram matrix of the anchors."""
    _check_same_spec(u, v)
    if len(u) == 0 or len(v) == 0:
        return 0.0
    return float(u.coeffs @ u.spec.gram(u.anchors, v.anchors) @ v.coeffs)


def norm2(v: RkhsElement) -> float:
    """Squared norm, clamped at zero against Gram round-off."""
    return max(inner(v, v), 0.0)


def norm(v: RkhsElement) -> float:
    return math.sqrt(norm2(v))


def axpy(a: float, u: RkhsElement, v: RkhsElement) -> RkhsElement:
    """a * u + v as a concatenated span."""
    _check_same_spec(u, v)
    anchors = np.vstack([u.anchors, v.anchors])
    coeffs = np.concatenate([a * u.coeffs, v.coeffs])
    return RkhsElement(u.spec, anchors, coeffs)


def scale(a: float, v: RkhsElement) -> RkhsElement:
    return RkhsElement(v.spec, v.anchors, a * v.coeffs)


def compress(v: RkhsElement, tol: float = 0.0) -> RkhsElement:
    """Merge bitwise-identical anchors, then drop terms with
    |c| * sqrt(K(y, y)) <= tol.  tol=0 removes exact zeros only, so the
    represented element is unchanged.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if len(v) == 0:
        return v
    index: dict[bytes, int] = {}
    order: list[int] = []
    merged = np.zeros(len(v))
    for i, row in enumerate(v.anchors):
        key = row.tobytes()
        j = index.get(key)
        if j is None:
            j = len(order)
            index[key] = j
            order.append(i)
        merged[j] += v.coeffs[i]
    anchors = v.anchors[order]
    coeffs = merged[: len(order)]
    weight = np.abs(coeffs) * np.sqrt(np.maximum(v.spec.diag(anchors), 0.0))
    keep = weight > tol
    return RkhsElement(v.spec, anchors[keep], coeffs[keep])


def span_gram(spec: KernelSpec, points: np.ndarray, C: np.ndarray, block: int = 2048) -> np.ndarray:
    """C.T @ K @ C for the Gram matrix K of `points`, in row blocks.

    Columns of C are coefficient vectors over the shared point list; the
    result is the matrix of pairwise inner products of the spanned elements.
    The full n x n Gram matrix is never materialized.
    """
    n, k = C.shape
    if len(points) != n:
        raise ValueError("points and coefficient rows differ in length")
    out = np.zeros((k, k))
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        out += C[i0:i1].T @ (spec.gram(points[i0:i1], points) @ C)
    return out
