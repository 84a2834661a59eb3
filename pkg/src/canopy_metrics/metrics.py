"""Scalar evaluation metrics over match results.

Counting-balanced F1 combines the two one-sided matching schemes with a
weight driven by the normalized counting error, so that over- and
under-prediction cannot be hidden by a favourable scheme choice.  The
balanced localization and crown-area errors reuse the same weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Disk, RasterSpec, ca_to_cd, rasterize, shape_iou
from .matching import CostParams, MatchResult, choose_K, match

__all__ = [
    "BalancedWeights",
    "prf1",
    "balanced_weights",
    "balanced_f1",
    "balanced_loc_error",
    "balanced_ca_error",
    "counting_nmae",
    "patch_iou",
    "individual_iou",
    "agreement_analysis",
    "evaluate",
]


@dataclass(frozen=True)
class BalancedWeights:
    """epsilon = (M - N)/N and alpha = 1/(1 + e^(2*epsilon))."""

    epsilon: float
    alpha: float


def balanced_weights(n_labels: int, m_preds: int) -> BalancedWeights:
    if n_labels <= 0:
        raise ValueError("balanced weights undefined without labels")
    eps = (m_preds - n_labels) / n_labels
    try:
        alpha = 1.0 / (1.0 + math.exp(2.0 * eps))
    except OverflowError:
        alpha = 0.0
    return BalancedWeights(epsilon=eps, alpha=alpha)


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1; zero denominators give 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


def balanced_f1(f1_mo: float, f1_om: float, n_labels: int, m_preds: int) -> float:
    w = balanced_weights(n_labels, m_preds)
    return w.alpha * f1_mo + (1.0 - w.alpha) * f1_om


def _loc_residuals(labels, preds, mo: MatchResult, om: MatchResult):
    """Per matched label and per matched prediction, distance to the mean
    center of its matches."""
    label_res = []
    for i, js in enumerate(mo.label_matches):
        if not js:
            continue
        mx = sum(preds[j].center[0] for j in js) / len(js)
        my = sum(preds[j].center[1] for j in js) / len(js)
        label_res.append(
            math.hypot(labels[i].center[0] - mx, labels[i].center[1] - my)
        )
    pred_res = []
    for j, is_ in enumerate(om.pred_matches):
        if not is_:
            continue
        mx = sum(labels[i].center[0] for i in is_) / len(is_)
        my = sum(labels[i].center[1] for i in is_) / len(is_)
        pred_res.append(
            math.hypot(preds[j].center[0] - mx, preds[j].center[1] - my)
        )
    return label_res, pred_res


def _ca_residuals(labels, preds, mo: MatchResult, om: MatchResult):
    """Same structure, but matched crown areas are summed before the
    absolute difference (total crown area, not mean, is what should agree)."""
    label_res = []
    for i, js in enumerate(mo.label_matches):
        if not js:
            continue
        label_res.append(
            abs(labels[i].crown_area - sum(preds[j].crown_area for j in js))
        )
    pred_res = []
    for j, is_ in enumerate(om.pred_matches):
        if not is_:
            continue
        pred_res.append(
            abs(preds[j].crown_area - sum(labels[i].crown_area for i in is_))
        )
    return label_res, pred_res


def _combine(label_res, pred_res, alpha):
    # the one-sided means are over matched nodes only; a side with no
    # matches contributes 0, and None means neither side matched anything
    if not label_res and not pred_res:
        return None
    term1 = sum(label_res) / len(label_res) if label_res else 0.0
    term2 = sum(pred_res) / len(pred_res) if pred_res else 0.0
    return alpha * term1 + (1.0 - alpha) * term2


def balanced_loc_error(labels, preds, mo, om, alpha: float):
    """alpha-weighted mean distance between each matched node and the mean
    center of its matches; None when nothing matched."""
    return _combine(*_loc_residuals(labels, preds, mo, om), alpha)


def balanced_ca_error(labels, preds, mo, om, alpha: float):
    """alpha-weighted mean absolute difference between each matched node's
    crown area and the summed crown area of its matches; None when nothing
    matched."""
    return _combine(*_ca_residuals(labels, preds, mo, om), alpha)


def counting_nmae(n_labels: int, m_preds: int) -> float:
    """100 * |M - N| / N for one patch."""
    if n_labels <= 0:
        raise ValueError("nMAE undefined for a patch without labels")
    return 100.0 * abs(m_preds - n_labels) / n_labels


def patch_iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Binary IoU of two same-grid masks; two empty masks agree (1.0)."""
    if mask_a.shape != mask_b.shape:
        raise ValueError("masks must share a raster")
    union = int(np.count_nonzero(mask_a | mask_b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(mask_a & mask_b)) / union


def _native_shape(tree):
    if tree.polygon is not None:
        return tree.polygon
    return Disk(center=tree.center, radius=0.5 * ca_to_cd(tree.crown_area))


def individual_iou(labels, preds, match11: MatchResult, spec: RasterSpec | None = None):
    """Mean shape IoU over one-to-one matched pairs, each side rendered as
    its native shape (polygon when present, equal-area disk otherwise);
    None when nothing matched."""
    vals = []
    for i, js in enumerate(match11.label_matches):
        for j in js:
            vals.append(shape_iou(_native_shape(labels[i]), _native_shape(preds[j]), spec))
    if not vals:
        return None
    return sum(vals) / len(vals)


def _group_by_patch(records):
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.patch_id, []).append(rec)
    return groups


def agreement_analysis(labels_a, labels_b, params: CostParams, k_max: int = 10):
    """Degree table of annotator differences.

    Matches set A against set B with both one-sided schemes per patch,
    unions the matched pairs into one bipartite graph, and classifies each
    connected component: degree 0 (unmatched single tree), identity (1-1),
    split of degree k (one A tree to k B trees), merge of degree k, or
    N-to-M.  Returns percentages of components, summing to 100.

    The comparison is exhaustive: both schemes run with the full k_max
    multiplicity rather than the count-ratio heuristic, so a split hides
    nothing even when the two sets have equal sizes.
    """
    ga = _group_by_patch(labels_a)
    gb = _group_by_patch(labels_b)
    splits: dict[int, int] = {}
    merges: dict[int, int] = {}
    degree0 = identity = ntom = total = 0
    for pid in sorted(set(ga) | set(gb)):
        a = ga.get(pid, [])
        b = gb.get(pid, [])
        mo = match(a, b, params, "many_to_one", k_max)
        om = match(a, b, params, "one_to_many", k_max)
        n, m = len(a), len(b)
        # union of both schemes' pairs, as an adjacency structure
        adj_a = [set() for _ in range(n)]
        adj_b = [set() for _ in range(m)]
        for res in (mo, om):
            rows, cols = np.nonzero(res.A)
            for i, j in zip(rows.tolist(), cols.tolist()):
                adj_a[i].add(j)
                adj_b[j].add(i)
        seen_a = [False] * n
        seen_b = [False] * m
        for start in range(n):
            if seen_a[start]:
                continue
            comp_a, comp_b = [], []
            stack = [("a", start)]
            seen_a[start] = True
            while stack:
                side, idx = stack.pop()
                if side == "a":
                    comp_a.append(idx)
                    for j in adj_a[idx]:
                        if not seen_b[j]:
                            seen_b[j] = True
                            stack.append(("b", j))
                else:
                    comp_b.append(idx)
                    for i in adj_b[idx]:
                        if not seen_a[i]:
                            seen_a[i] = True
                            stack.append(("a", i))
            total += 1
            ka, kb = len(comp_a), len(comp_b)
            if kb == 0:
                degree0 += 1
            elif ka == 1 and kb == 1:
                identity += 1
            elif ka == 1:
                splits[kb] = splits.get(kb, 0) + 1
            elif kb == 1:
                merges[ka] = merges.get(ka, 0) + 1
            else:
                ntom += 1
        for j in range(m):
            if not seen_b[j]:
                total += 1
                degree0 += 1
    if total == 0:
        return {
            "components": 0,
            "degree_0_pct": 0.0,
            "identity_pct": 0.0,
            "split_pct": {},
            "merge_pct": {},
            "n_to_m_pct": 0.0,
        }
    pct = lambda c: 100.0 * c / total
    return {
        "components": total,
        "degree_0_pct": pct(degree0),
        "identity_pct": pct(identity),
        "split_pct": {k: pct(v) for k, v in sorted(splits.items())},
        "merge_pct": {k: pct(v) for k, v in sorted(merges.items())},
        "n_to_m_pct": pct(ntom),
    }


def _eval_patch(task):
    """Per-patch piece of evaluate: all matching and residual collection
    for one patch.  Pure function of its argument tuple so it can run in
    a worker pool."""
    a, b, gammas, lambda_size, k_max, area_metrics, resolution = task
    K = choose_K(a, b, k_max)
    out_gamma = []
    for gamma in gammas:
        params = CostParams(gamma=gamma, lambda_size=lambda_size)
        counts = {}
        results = {}
        for scheme in ("one_to_one", "many_to_one", "one_to_many"):
            res = match(a, b, params, scheme, 1 if scheme == "one_to_one" else K)
            results[scheme] = res
            counts[scheme] = (res.tp, res.fp, res.fn)
        loc = _loc_residuals(a, b, results["many_to_one"], results["one_to_many"])
        ca = _ca_residuals(a, b, results["many_to_one"], results["one_to_many"])
        out_gamma.append((counts, loc, ca))

    iou_vals = []
    p_iou = None
    if area_metrics:
        m11 = match(a, b, CostParams(gamma=0.5, lambda_size=lambda_size), "one_to_one", 1)
        for i, js in enumerate(m11.label_matches):
            for j in js:
                iou_vals.append(shape_iou(_native_shape(a[i]), _native_shape(b[j])))
        shapes = [_native_shape(t) for t in a + b]
        if shapes:
            bounds = [s.bounds for s in shapes]
            cover = (
                min(b_[0] for b_ in bounds),
                min(b_[1] for b_ in bounds),
                max(b_[2] for b_ in bounds),
                max(b_[3] for b_ in bounds),
            )
            spec = RasterSpec.cover(cover, resolution, margin=resolution)
            mask_a = np.zeros((spec.height, spec.width), dtype=bool)
            for t in a:
                mask_a |= rasterize(_native_shape(t), spec)
            mask_b = np.zeros((spec.height, spec.width), dtype=bool)
            for t in b:
                mask_b |= rasterize(_native_shape(t), spec)
            p_iou = patch_iou(mask_a, mask_b)
    return out_gamma, (len(a), len(b)), iou_vals, p_iou


def evaluate(
    labels,
    preds,
    gammas=(0.5, 1.0, 2.0),
    lambda_size: float = 0.1,
    k_max: int = 10,
    resolution: float = 0.2,
    area_metrics: bool = False,
    jobs: int = 1,
):
    """Full evaluation of predictions against labels.

    Matching runs per patch; TP/FP/FN and error residuals accumulate
    globally, the balancing weight uses the global counts, and counting
    nMAE averages per-patch values (patches without labels are skipped and
    tallied).  Area metrics (individual IoU at gamma 0.5 one-to-one,
    per-patch mask IoU) are optional because they need shape rendering.
    With jobs > 1 patches are scored in a process pool; results are
    reduced in patch order, so the report does not depend on jobs.
    """
    ga = _group_by_patch(labels)
    gb = _group_by_patch(preds)
    patch_ids = sorted(set(ga) | set(gb))
    n_total, m_total = len(labels), len(preds)
    gammas = tuple(gammas)

    tasks = [
        (ga.get(pid, []), gb.get(pid, []), gammas, lambda_size, k_max, area_metrics, resolution)
        for pid in patch_ids
    ]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            patch_results = list(pool.map(_eval_patch, tasks))
    else:
        patch_results = [_eval_patch(t) for t in tasks]

    weights = None
    if n_total > 0:
        weights = balanced_weights(n_total, m_total)

    per_gamma = []
    for gi, gamma in enumerate(gammas):
        counts = {s: [0, 0, 0] for s in ("one_to_one", "many_to_one", "one_to_many")}
        loc_label_res: list[float] = []
        loc_pred_res: list[float] = []
        ca_label_res: list[float] = []
        ca_pred_res: list[float] = []
        for out_gamma, _, _, _ in patch_results:
            gcounts, loc, ca = out_gamma[gi]
            for scheme, (tp, fp, fn) in gcounts.items():
                counts[scheme][0] += tp
                counts[scheme][1] += fp
                counts[scheme][2] += fn
            loc_label_res.extend(loc[0])
            loc_pred_res.extend(loc[1])
            ca_label_res.extend(ca[0])
            ca_pred_res.extend(ca[1])
        schemes = {}
        for scheme, (tp, fp, fn) in counts.items():
            p, r, f1 = prf1(tp, fp, fn)
            schemes[scheme] = {
                "tp": tp,
                "fp": fp,
                "fn": fn,
                "precision": p,
                "recall": r,
                "f1": f1,
            }
        entry = {
            "gamma": gamma,
            "schemes": schemes,
            "bf1": None,
            "e_loc_m": None,
            "e_ca_m2": None,
        }
        if weights is not None:
            entry["bf1"] = (
                weights.alpha * schemes["many_to_one"]["f1"]
                + (1.0 - weights.alpha) * schemes["one_to_many"]["f1"]
            )
            entry["e_loc_m"] = _combine(loc_label_res, loc_pred_res, weights.alpha)
            entry["e_ca_m2"] = _combine(ca_label_res, ca_pred_res, weights.alpha)
        per_gamma.append(entry)

    nmae_vals = []
    nmae_skipped = 0
    for _, (n_p, m_p), _, _ in patch_results:
        if n_p == 0:
            nmae_skipped += 1
            continue
        nmae_vals.append(counting_nmae(n_p, m_p))
    nmae = sum(nmae_vals) / len(nmae_vals) if nmae_vals else None

    ind_iou = None
    p_iou = None
    if area_metrics:
        iou_vals = [v for _, _, vals, _ in patch_results for v in vals]
        patch_ious = [pi for _, _, _, pi in patch_results if pi is not None]
        ind_iou = sum(iou_vals) / len(iou_vals) if iou_vals else None
        p_iou = sum(patch_ious) / len(patch_ious) if patch_ious else None

    return {
        "counts": {
            "labels": n_total,
            "predictions": m_total,
            "patches": len(patch_ids),
            "nmae_skipped_patches": nmae_skipped,
        },
        "per_gamma": per_gamma,
        "counting_nmae_pct": nmae,
        "individual_iou": ind_iou,
        "patch_iou": p_iou,
    }
