"""Cost matrices and the three Hungarian matching schemes.

Costs couple center distance with a crown-area penalty and become
infeasible past a distance threshold scaled by crown diameter.  The
one-sided multi-matching schemes (many_to_one, one_to_many) tile the cost
matrix K times along one axis before solving, then fold the copies back
onto the original identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import TreeRecord

__all__ = [
    "INFEASIBLE",
    "CostParams",
    "CostMatrix",
    "MatchResult",
    "pairwise_cost",
    "build_cost_matrix",
    "hungarian",
    "choose_K",
    "match",
    "SCHEMES",
]

INFEASIBLE = math.inf

SCHEMES = ("one_to_one", "many_to_one", "one_to_many")


@dataclass(frozen=True)
class CostParams:
    gamma: float
    lambda_size: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if not (math.isfinite(self.lambda_size) and self.lambda_size >= 0):
            raise ValueError(
                f"lambda_size must be non-negative, got {self.lambda_size!r}"
            )


@dataclass(frozen=True)
class CostMatrix:
    """Dense label x prediction costs; infeasible pairs hold math.inf."""

    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def pairwise_cost(
    label: TreeRecord,
    pred: TreeRecord,
    params: CostParams,
    threshold_on: str = "label_cd",
) -> float:
    """Cost of pairing one label with one prediction.

    d + lambda_size * |CA_i - CA_j| when the center distance d is strictly
    below gamma times the crown diameter of the thresholding side, else
    INFEASIBLE.  threshold_on picks that side: label_cd for the 1-1 and
    N-1 schemes, pred_cd for 1-N.
    """
    d = math.hypot(
        label.center[0] - pred.center[0], label.center[1] - pred.center[1]
    )
    if threshold_on == "label_cd":
        cd = label.crown_diameter
    elif threshold_on == "pred_cd":
        cd = pred.crown_diameter
    else:
        raise ValueError(f"threshold_on must be label_cd or pred_cd, got {threshold_on!r}")
    if d < params.gamma * cd:
        return d + params.lambda_size * abs(label.crown_area - pred.crown_area)
    return INFEASIBLE


def build_cost_matrix(
    labels, preds, params: CostParams, threshold_on: str = "label_cd"
) -> CostMatrix:
    """Vectorized pairwise_cost over all label x prediction pairs."""
    n, m = len(labels), len(preds)
    if n == 0 or m == 0:
        return CostMatrix(np.full((n, m), INFEASIBLE))
    lx = np.array([t.center[0] for t in labels])
    ly = np.array([t.center[1] for t in labels])
    la = np.array([t.crown_area for t in labels])
    px = np.array([t.center[0] for t in preds])
    py = np.array([t.center[1] for t in preds])
    pa = np.array([t.crown_area for t in preds])
    d = np.hypot(lx[:, None] - px[None, :], ly[:, None] - py[None, :])
    if threshold_on == "label_cd":
        cd = np.array([t.crown_diameter for t in labels])[:, None]
    elif threshold_on == "pred_cd":
        cd = np.array([t.crown_diameter for t in preds])[None, :]
    else:
        raise ValueError(f"threshold_on must be label_cd or pred_cd, got {threshold_on!r}")
    cost = d + params.lambda_size * np.abs(la[:, None] - pa[None, :])
    return CostMatrix(np.where(d < params.gamma * cd, cost, INFEASIBLE))


def hungarian(costs: CostMatrix | np.ndarray):
    """Max-cardinality feasible assignment with minimum total cost.

    Returns (assign, total): assign[i] is the column matched to row i or
    -1, total the summed cost of the kept pairs.  Infeasible entries are
    replaced internally by a big-M sentinel exceeding the sum of all
    finite costs, which makes the solver maximize the number of feasible
    pairs before minimizing their cost; sentinel assignments are dropped.
    """
    values = costs.values if isinstance(costs, CostMatrix) else np.asarray(costs)
    n, m = values.shape
    assign = np.full(n, -1, dtype=np.int64)
    finite = np.isfinite(values)
    if not finite.any():
        return assign, 0.0
    big = values[finite].sum() + 1.0
    rows, cols = linear_sum_assignment(np.where(finite, values, big))
    total = 0.0
    for r, c in zip(rows, cols):
        if finite[r, c]:
            assign[r] = c
            total += values[r, c]
    return assign, total


def choose_K(labels, preds, k_max: int = 10) -> int:
    """Tiling multiplicity: ceil of the larger count ratio, clamped to
    [1, k_max]; 1 when either side is empty."""
    n, m = len(labels), len(preds)
    if n == 0 or m == 0:
        return 1
    ratio = max(-(-m // n), -(-n // m))
    return max(1, min(k_max, ratio))


@dataclass(frozen=True)
class MatchResult:
    scheme: str
    A: np.ndarray
    tp: int
    fp: int
    fn: int
    label_matches: tuple[tuple[int, ...], ...]
    pred_matches: tuple[tuple[int, ...], ...]
    K: int


def _fold(n, m, pairs):
    A = np.zeros((n, m), dtype=np.uint8)
    for r, c in pairs:
        A[r % n, c % m] = 1
    return A


def match(
    labels,
    preds,
    params: CostParams,
    scheme: str,
    K: int | None = None,
) -> MatchResult:
    """Run one matching scheme on a single patch.

    one_to_one solves the plain N x M problem.  many_to_one tiles the rows
    K times so each label can absorb up to K predictions; labels with at
    least one matched prediction count as TP, unmatched predictions as FP,
    unmatched labels as FN.  one_to_many tiles the columns K times and
    thresholds on the prediction's crown diameter; predictions with at
    least one matched label count as TP, unmatched predictions as FP,
    unmatched labels as FN.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    n, m = len(labels), len(preds)
    if K is None:
        K = choose_K(labels, preds)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if n == 0 or m == 0:
        return MatchResult(
            scheme=scheme,
            A=np.zeros((n, m), dtype=np.uint8),
            tp=0,
            fp=m,
            fn=n,
            label_matches=tuple(() for _ in range(n)),
            pred_matches=tuple(() for _ in range(m)),
            K=K,
        )

    if scheme == "one_to_one":
        base = build_cost_matrix(labels, preds, params, "label_cd").values
        assign, _ = hungarian(base)
        pairs = [(r, int(c)) for r, c in enumerate(assign) if c >= 0]
        K_used = 1
    elif scheme == "many_to_one":
        base = build_cost_matrix(labels, preds, params, "label_cd").values
        assign, _ = hungarian(np.tile(base, (K, 1)))
        pairs = [(r, int(c)) for r, c in enumerate(assign) if c >= 0]
        K_used = K
    else:  # one_to_many
        base = build_cost_matrix(labels, preds, params, "pred_cd").values
        assign, _ = hungarian(np.tile(base, (1, K)))
        pairs = [(r, int(c)) for r, c in enumerate(assign) if c >= 0]
        K_used = K

    A = _fold(n, m, pairs)
    label_matches = tuple(tuple(np.nonzero(A[i])[0].tolist()) for i in range(n))
    pred_matches = tuple(tuple(np.nonzero(A[:, j])[0].tolist()) for j in range(m))
    matched_labels = sum(1 for s in label_matches if s)
    matched_preds = sum(1 for s in pred_matches if s)

    if scheme == "one_to_many":
        tp = matched_preds
        fp = m - matched_preds
        fn = n - matched_labels
    else:
        tp = matched_labels
        fp = m - matched_preds
        fn = n - matched_labels
    return MatchResult(
        scheme=scheme,
        A=A,
        tp=tp,
        fp=fp,
        fn=fn,
        label_matches=label_matches,
        pred_matches=pred_matches,
        K=K_used,
    )
