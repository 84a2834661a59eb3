"""Generative models of labeling and prediction noise.

Label nodes carry a quantity of real trees: an integer q models q real
trees merged into one label, a reciprocal 1/n models a real tree split
into n labels, both drawn from one-truncated Poisson mixtures.  Each
label then receives a random number of predictions whose split/merge
balance depends on q.  The same mixture, with measured constants, drives
a Bayes posterior of real crown area given labeled crown area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .geometry import TreeRecord, cd_to_ca
from .matching import CostParams
from .metrics import evaluate

__all__ = [
    "LabelNoiseModel",
    "PredictionNoiseModel",
    "PosteriorModel",
    "NoiseGraph",
    "synthetic_labels",
    "label_quantity_pmf",
    "prediction_count_pmf",
    "perturb_predictions",
    "run_matching_sweep",
    "simulate_label_graph",
    "precision_recall_vs_real",
    "materialize_split",
    "likelihood_matrix",
    "posterior_ca",
    "posterior_entropy",
    "prior_from_crown_diameters",
]

CA_FLOOR = 0.01


def _poisson_pmf(k: int, rate: float) -> float:
    return math.exp(-rate) * rate**k / math.factorial(k)


def _trunc_norm(rate: float) -> float:
    # mass of the Poisson with 0 and 1 removed
    return 1.0 - _poisson_pmf(0, rate) - _poisson_pmf(1, rate)


def _as_quantity(q, q_max: int) -> Fraction:
    """Coerce q into the support {1/n} ∪ N, up to q_max either way."""
    frac = Fraction(q).limit_denominator(q_max)
    if abs(float(frac) - float(q)) > 1e-9:
        raise ValueError(f"quantity {q!r} is not an integer or reciprocal")
    if frac.numerator == 0:
        raise ValueError("quantity must be positive")
    if frac.denominator == 1 and 1 <= frac.numerator <= q_max:
        return frac
    if frac.numerator == 1 and 2 <= frac.denominator <= q_max:
        return frac
    raise ValueError(f"quantity {q!r} outside the truncated support")


@dataclass(frozen=True)
class LabelNoiseModel:
    """Mixture over label quantities q.

    Dirac p1_label at q=1; the rest splits between the merge branch
    (integer q >= 2) and the split branch (q = 1/n) with weights
    (1 -+ bias)/2: positive bias moves mass to splitting (over-labeling),
    negative bias to merging (under-labeling).
    """

    p1_label: float
    poisson_rate: float
    bias: float = 0.0
    q_max: int = 50

    def __post_init__(self):
        if not 0.0 < self.p1_label <= 1.0:
            raise ValueError(f"p1_label must be in (0, 1], got {self.p1_label!r}")
        if not self.poisson_rate > 0:
            raise ValueError(f"poisson_rate must be positive, got {self.poisson_rate!r}")
        if not -1.0 < self.bias < 1.0:
            raise ValueError(f"bias must be in (-1, 1), got {self.bias!r}")
        if self.q_max < 2:
            raise ValueError("q_max must be at least 2")


def label_quantity_pmf(model: LabelNoiseModel, q) -> float:
    frac = _as_quantity(q, model.q_max)
    if frac == 1:
        return model.p1_label
    rest = 1.0 - model.p1_label
    norm = _trunc_norm(model.poisson_rate)
    if frac.denominator == 1:
        weight = rest * (1.0 - model.bias) / 2.0  # merge: q real trees, one label
        return weight * _poisson_pmf(frac.numerator, model.poisson_rate) / norm
    weight = rest * (1.0 + model.bias) / 2.0  # split: one real tree, n labels
    return weight * _poisson_pmf(frac.denominator, model.poisson_rate) / norm


@dataclass(frozen=True)
class PredictionNoiseModel:
    """Mixture over prediction counts n given a label quantity q: the mass
    off n=1 splits q:1 between splitting into many predictions and merging
    into a shared one, so bigger labels split more often."""

    p1_pred: float
    poisson_rate: float
    n_max: int = 50

    def __post_init__(self):
        if not 0.0 < self.p1_pred <= 1.0:
            raise ValueError(f"p1_pred must be in (0, 1], got {self.p1_pred!r}")
        if not self.poisson_rate > 0:
            raise ValueError(f"poisson_rate must be positive, got {self.poisson_rate!r}")


def prediction_count_pmf(model: PredictionNoiseModel, q, n) -> float:
    qv = float(_as_quantity(q, 10**9))
    frac = _as_quantity(n, model.n_max)
    if frac == 1:
        return model.p1_pred
    rest = 1.0 - model.p1_pred
    norm = _trunc_norm(model.poisson_rate)
    if frac.denominator == 1:
        weight = qv * rest / (1.0 + qv)  # split into n predictions
        return weight * _poisson_pmf(frac.numerator, model.poisson_rate) / norm
    weight = rest / (1.0 + qv)  # merged into a prediction shared by k labels
    return weight * _poisson_pmf(frac.denominator, model.poisson_rate) / norm


def _label_support(model: LabelNoiseModel):
    support = [Fraction(1)]
    support += [Fraction(k) for k in range(2, model.q_max + 1)]
    support += [Fraction(1, k) for k in range(2, model.q_max + 1)]
    probs = np.array([label_quantity_pmf(model, f) for f in support])
    return support, probs / probs.sum()


def _pred_support(model: PredictionNoiseModel, q):
    support = [Fraction(1)]
    support += [Fraction(k) for k in range(2, model.n_max + 1)]
    support += [Fraction(1, k) for k in range(2, model.n_max + 1)]
    probs = np.array([prediction_count_pmf(model, q, f) for f in support])
    return support, probs / probs.sum()


def synthetic_labels(
    n: int,
    seed: int,
    patch_id: str = "synthetic",
    cd_range=(2.0, 20.0),
    area_per_tree: float = 80.0,
) -> list[TreeRecord]:
    """Random labels for simulations: log-normal crown diameters clipped
    to cd_range, centers uniform over a square sized for roughly
    area_per_tree m^2 per tree."""
    if n <= 0:
        raise ValueError("need a positive number of labels")
    rng = np.random.default_rng(seed)
    side = math.sqrt(n * area_per_tree)
    cds = np.clip(rng.lognormal(math.log(6.0), 0.45, size=n), *cd_range)
    xs = rng.uniform(0.0, side, size=n)
    ys = rng.uniform(0.0, side, size=n)
    return [
        TreeRecord(
            patch_id=patch_id,
            center=(float(x), float(y)),
            crown_area=cd_to_ca(float(cd)),
        )
        for x, y, cd in zip(xs, ys, cds)
    ]


def perturb_predictions(labels, s: float, rng) -> list[TreeRecord]:
    """Synthetic predictions from labels, for the under/over-prediction
    sweep.

    Samples round(s*N) labels (with replacement when s > 1), scales crown
    areas by (2 - s) with a small positive floor, and jitters centers with
    an isotropic Gaussian of std CD/2.
    """
    if not 0.0 < s <= 2.0:
        raise ValueError(f"sampling fraction must be in (0, 2], got {s!r}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    n = len(labels)
    n_pick = int(round(s * n))
    if n_pick == 0:
        return []
    idx = rng.choice(n, size=n_pick, replace=s > 1.0)
    preds = []
    for i in idx:
        t = labels[int(i)]
        ca = max((2.0 - s) * t.crown_area, CA_FLOOR)
        std = 0.5 * t.crown_diameter
        dx, dy = rng.normal(0.0, std, size=2)
        preds.append(
            TreeRecord(
                patch_id=t.patch_id,
                center=(t.center[0] + dx, t.center[1] + dy),
                crown_area=ca,
            )
        )
    return preds


def run_matching_sweep(labels, s_grid, params: CostParams, seed: int, k_max: int = 10):
    """F1 of every matching scheme, and balanced F1, for each sampling
    fraction s.  Returns one row dict per s."""
    if not labels:
        raise ValueError("sweep needs at least one label")
    rng = np.random.default_rng(seed)
    rows = []
    for s in s_grid:
        preds = perturb_predictions(labels, float(s), rng)
        report = evaluate(
            labels,
            preds,
            gammas=(params.gamma,),
            lambda_size=params.lambda_size,
            k_max=k_max,
        )
        entry = report["per_gamma"][0]
        rows.append(
            {
                "s": float(s),
                "n_preds": len(preds),
                "f1_one_to_one": entry["schemes"]["one_to_one"]["f1"],
                "f1_many_to_one": entry["schemes"]["many_to_one"]["f1"],
                "f1_one_to_many": entry["schemes"]["one_to_many"]["f1"],
                "bf1": entry["bf1"],
            }
        )
    return rows


@dataclass(frozen=True)
class NoiseGraph:
    """Tripartite real-label-prediction connectivity from the generative
    model.  label_reals[i] and label_preds[i] hold the real-tree ids and
    prediction ids attached to label node i."""

    n_real: int
    n_preds: int
    label_q: tuple
    label_reals: tuple
    label_preds: tuple


def simulate_label_graph(
    n_real_trees: int,
    label_model: LabelNoiseModel,
    pred_model: PredictionNoiseModel,
    rng_seed,
) -> NoiseGraph:
    """Sample the noise graph over a fixed budget of real trees.

    Label nodes are drawn until the budget is consumed: an integer q
    absorbs q new real trees (clamped to what remains), a reciprocal 1/k
    spends one real tree and emits k label nodes sharing it.  Each label
    node then draws a prediction count: an integer n attaches n fresh
    predictions, a reciprocal 1/k pools k consecutive such labels onto one
    shared prediction (arrival order, per k).
    """
    if n_real_trees <= 0:
        raise ValueError("need a positive number of real trees")
    rng = np.random.default_rng(rng_seed)
    support, probs = _label_support(label_model)
    label_q: list[Fraction] = []
    label_reals: list[tuple[int, ...]] = []
    next_real = 0
    remaining = n_real_trees
    while remaining > 0:
        q = support[int(rng.choice(len(support), p=probs))]
        if q.denominator == 1:
            take = min(int(q), remaining)
            reals = tuple(range(next_real, next_real + take))
            next_real += take
            remaining -= take
            label_q.append(Fraction(take))
            label_reals.append(reals)
        else:
            k = q.denominator
            real = (next_real,)
            next_real += 1
            remaining -= 1
            for _ in range(k):
                label_q.append(q)
                label_reals.append(real)

    pred_cache: dict = {}
    label_preds: list[tuple[int, ...]] = []
    next_pred = 0
    open_pools: dict[int, tuple[int, int]] = {}  # k -> (pred id, slots left)
    for q in label_q:
        if q not in pred_cache:
            pred_cache[q] = _pred_support(pred_model, q)
        supp, pr = pred_cache[q]
        n = supp[int(rng.choice(len(supp), p=pr))]
        if n.denominator == 1:
            preds = tuple(range(next_pred, next_pred + int(n)))
            next_pred += int(n)
            label_preds.append(preds)
        else:
            k = n.denominator
            if k in open_pools and open_pools[k][1] > 0:
                pid, left = open_pools[k]
                open_pools[k] = (pid, left - 1)
            else:
                pid = next_pred
                next_pred += 1
                open_pools[k] = (pid, k - 1)
            label_preds.append((pid,))
    return NoiseGraph(
        n_real=n_real_trees,
        n_preds=next_pred,
        label_q=tuple(label_q),
        label_reals=tuple(label_reals),
        label_preds=tuple(label_preds),
    )


def _graph_components(graph: NoiseGraph):
    """Connected components over labels joined by shared reals or shared
    predictions; yields (n_reals, n_labels, n_preds) per component."""
    n_lab = len(graph.label_q)
    by_real: dict[int, list[int]] = {}
    by_pred: dict[int, list[int]] = {}
    for i in range(n_lab):
        for r in graph.label_reals[i]:
            by_real.setdefault(r, []).append(i)
        for p in graph.label_preds[i]:
            by_pred.setdefault(p, []).append(i)
    seen = [False] * n_lab
    comps = []
    for start in range(n_lab):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        reals: set[int] = set()
        preds: set[int] = set()
        size = 0
        while stack:
            i = stack.pop()
            size += 1
            for r in graph.label_reals[i]:
                if r not in reals:
                    reals.add(r)
                    for j in by_real[r]:
                        if not seen[j]:
                            seen[j] = True
                            stack.append(j)
            for p in graph.label_preds[i]:
                if p not in preds:
                    preds.add(p)
                    for j in by_pred[p]:
                        if not seen[j]:
                            seen[j] = True
                            stack.append(j)
        comps.append((len(reals), size, len(preds)))
    return comps


def precision_recall_vs_real(graph: NoiseGraph, scheme: str):
    """Precision and recall against real trees under one positive-counting
    rule.

    Per connected component with R reals, L labels, P predictions:
    one_to_one counts one positive prediction and one recovered real;
    many_to_one counts all P predictions but one real; one_to_many one
    prediction but all R reals; many_to_many everything.
    """
    rules = {
        "one_to_one": lambda r, l, p: (min(1, p), min(1, r)),
        "many_to_one": lambda r, l, p: (p, min(1, r)),
        "one_to_many": lambda r, l, p: (min(1, p), r),
        "many_to_many": lambda r, l, p: (p, r),
    }
    if scheme not in rules:
        raise ValueError(f"unknown scheme {scheme!r}")
    rule = rules[scheme]
    pos_preds = pos_reals = tot_preds = tot_reals = 0
    for r, l, p in _graph_components(graph):
        pp, pr = rule(r, l, p)
        pos_preds += pp
        pos_reals += pr
        tot_preds += p
        tot_reals += r
    precision = pos_preds / tot_preds if tot_preds else 0.0
    recall = pos_reals / tot_reals if tot_reals else 0.0
    return precision, recall


def materialize_split(tree: TreeRecord, k: int) -> list[TreeRecord]:
    """Realize a split label as k children of equal crown area CA/k placed
    on a circle of radius CD/4 around the parent center."""
    if k < 2:
        raise ValueError("a split needs k >= 2 children")
    r = tree.crown_diameter / 4.0
    out = []
    for i in range(k):
        angle = 2.0 * math.pi * i / k
        out.append(
            TreeRecord(
                patch_id=tree.patch_id,
                center=(
                    tree.center[0] + r * math.cos(angle),
                    tree.center[1] + r * math.sin(angle),
                ),
                crown_area=tree.crown_area / k,
                score=tree.score,
            )
        )
    return out


@dataclass(frozen=True)
class PosteriorModel:
    """Likelihood constants of annotator agreement plus a prior over real
    crown area on an arithmetic grid {step, 2*step, ...}.

    The split branch is implemented in the same normalized form as the
    merge branch; literal_split_branch=True reproduces the printed
    reciprocal variant instead (see the package notes).
    """

    grid: np.ndarray
    prior: np.ndarray
    p_zero: float = 0.35
    p_identity: float = 0.44
    merge_weight: float = 0.07
    split_weight: float = 0.06
    poisson_rate: float = 0.25
    q_max: int = 50
    literal_split_branch: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        prior = np.asarray(self.prior, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing, length >= 2")
        step = grid[0]
        if step <= 0 or not np.allclose(grid, step * np.arange(1, grid.size + 1)):
            raise ValueError("grid must be arithmetic {step, 2*step, ...}")
        if prior.shape != grid.shape or np.any(prior < 0) or prior.sum() <= 0:
            raise ValueError("prior must be a non-negative pmf on the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "prior", prior / prior.sum())


def likelihood_matrix(model: PosteriorModel) -> np.ndarray:
    """p(CA_l | CA_r) over the positive grid, rows (one per real CA)
    renormalized to 1.

    The zero-size branch (unlabeled tree) is dropped here: rows only
    cover observable labels.  Merge multiples q*CA_r land exactly on the
    arithmetic grid; split fractions CA_r/q exist only where q divides the
    grid index.
    """
    n = model.grid.size
    rate = model.poisson_rate
    denom = 1.0 - _poisson_pmf(1, rate)
    like = np.zeros((n, n))
    for i in range(n):  # i: real CA index, grid value (i+1)*step
        like[i, i] += model.p_identity
        for q in range(2, model.q_max + 1):
            j = (i + 1) * q - 1  # label = q * real
            if j < n:
                like[i, j] += model.merge_weight * _poisson_pmf(q, rate) / denom
            if (i + 1) % q == 0:  # label = real / q
                j = (i + 1) // q - 1
                if model.literal_split_branch:
                    like[i, j] += model.split_weight * denom / _poisson_pmf(q, rate)
                else:
                    like[i, j] += model.split_weight * _poisson_pmf(q, rate) / denom
    return like / like.sum(axis=1, keepdims=True)


def posterior_ca(model: PosteriorModel) -> np.ndarray:
    """p(CA_r | CA_l): column j is the posterior over real CA given the
    label CA at grid[j], from Bayes' rule with the model prior."""
    like = likelihood_matrix(model)
    joint = like * model.prior[:, None]
    col_mass = joint.sum(axis=0)
    if np.any(col_mass <= 0):
        bad = model.grid[col_mass <= 0]
        raise ValueError(f"zero likelihood mass for labeled CA {bad.tolist()}")
    return joint / col_mass[None, :]


def posterior_entropy(posterior: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each posterior column."""
    p = np.asarray(posterior, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=0)


def prior_from_crown_diameters(cds, grid: np.ndarray) -> np.ndarray:
    """Histogram measured crown diameters (meters) onto the CA grid.

    Each diameter becomes a crown area and lands in the nearest grid bin;
    values beyond the last edge are clamped to the end bins.
    """
    grid = np.asarray(grid, dtype=np.float64)
    cas = np.array([cd_to_ca(float(c)) for c in cds])
    if cas.size == 0:
        raise ValueError("no crown diameters supplied")
    edges = np.concatenate([[0.0], (grid[:-1] + grid[1:]) / 2.0, [np.inf]])
    counts, _ = np.histogram(cas, bins=edges)
    if counts.sum() == 0:
        raise ValueError("no crown diameters fall on the grid")
    return counts / counts.sum()
