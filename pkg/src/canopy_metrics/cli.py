"""Command line surface: canopy-metrics {eval,simulate,posterior,heatmap,agree}.

Option precedence is CLI flag > config file (flat key=value lines, via
--config) > built-in default.  Exit codes: 0 success, 2 input/validation
failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .geometry import RasterSpec
from .heatmap import (
    DecodeParams,
    Heatmap,
    SizeMap,
    build_filter_bank,
    decode_centernet,
    decode_heatmap,
    encode,
    merge_heatmaps,
    read_raster,
    separate_instances,
    write_raster,
)
from .matching import CostParams
from .metrics import agreement_analysis, evaluate
from .noise import (
    LabelNoiseModel,
    PosteriorModel,
    PredictionNoiseModel,
    likelihood_matrix,
    posterior_entropy,
    precision_recall_vs_real,
    prior_from_crown_diameters,
    run_matching_sweep,
    simulate_label_graph,
    synthetic_labels,
)

_SCHEMES4 = ("one_to_one", "many_to_one", "one_to_many", "many_to_many")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _opt(args, cfg, key, cast, default):
    """CLI flag if given, else config file entry, else default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in cfg:
        raw = cfg[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _load_cfg(args) -> dict:
    if getattr(args, "config", None):
        return tio.load_config_file(args.config)
    return {}


def _flat(groups: dict) -> list:
    return [t for ts in groups.values() for t in ts]


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


def _csv_text(header, rows) -> str:
    import io as _stringio

    buf = _stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def _trees_csv_text(trees) -> str:
    import io as _stringio

    buf = _stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(tio.TREE_TABLE_HEADER)
    for t in trees:
        writer.writerow(
            [
                t.patch_id,
                repr(float(t.center[0])),
                repr(float(t.center[1])),
                repr(float(t.crown_area)),
                "" if t.score is None else repr(float(t.score)),
                "" if t.polygon is None else tio.format_wkt_polygon(t.polygon),
            ]
        )
    return buf.getvalue()


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    labels_path = _opt(args, cfg, "labels", str, None)
    preds_path = _opt(args, cfg, "preds", str, None)
    if not labels_path or not preds_path:
        raise ValueError("eval needs --labels and --preds")
    gammas = _opt(args, cfg, "gamma", _floats, [0.5, 1.0, 2.0])
    lambda_size = _opt(args, cfg, "lambda_size", float, 0.1)
    k_max = int(_opt(args, cfg, "kmax", int, 10))
    resolution = _opt(args, cfg, "resolution", float, 0.2)
    jobs = int(_opt(args, cfg, "jobs", int, 1))
    area = bool(_opt(args, cfg, "area_metrics", bool, False))
    fmt = _opt(args, cfg, "format", str, "json")
    labels = _flat(tio.load_trees(labels_path))
    preds = _flat(tio.load_trees(preds_path))
    result = evaluate(
        labels,
        preds,
        gammas=gammas,
        lambda_size=lambda_size,
        k_max=k_max,
        resolution=resolution,
        area_metrics=area,
        jobs=jobs,
    )
    report = {
        "config": {
            "gammas": gammas,
            "lambda_size": lambda_size,
            "k_max": k_max,
            "resolution": resolution,
            "area_metrics": area,
            "labels": str(labels_path),
            "predictions": str(preds_path),
        },
        **result,
    }
    if fmt == "json":
        _emit(tio.report_json(report), args.out)
    elif fmt == "csv":
        header, rows = tio.report_csv_rows(report)
        _emit(_csv_text(header, rows), args.out)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return 0


def _sweep_rows_graph(first_col, values, make_label_model, pred_model, n_real, seed):
    header = [first_col] + [
        f"{scheme}_{metric}" for scheme in _SCHEMES4 for metric in ("precision", "recall")
    ]
    rows = []
    for i, v in enumerate(values):
        graph = simulate_label_graph(n_real, make_label_model(v), pred_model, [seed, i])
        row = [v]
        for scheme in _SCHEMES4:
            p, r = precision_recall_vs_real(graph, scheme)
            row.extend([p, r])
        rows.append(row)
    return header, rows


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    sweep = _opt(args, cfg, "sweep", str, "s")
    seed = int(_opt(args, cfg, "seed", int, 0))
    rate = _opt(args, cfg, "rate", float, 0.25)
    p1_label = _opt(args, cfg, "p1_label", float, 0.5)
    p1_pred = _opt(args, cfg, "p1_pred", float, 0.6)
    n_real = int(_opt(args, cfg, "n_real", int, 10000))
    if sweep == "s":
        gamma = _opt(args, cfg, "gamma", float, 1.0)
        lambda_size = _opt(args, cfg, "lambda_size", float, 0.1)
        k_max = int(_opt(args, cfg, "kmax", int, 10))
        s_grid = _opt(args, cfg, "s_grid", _floats, [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75])
        labels_path = _opt(args, cfg, "labels", str, None)
        if labels_path:
            labels = _flat(tio.load_trees(labels_path))
        else:
            n = int(_opt(args, cfg, "synthetic", int, 500))
            labels = synthetic_labels(n, seed)
        rows = run_matching_sweep(
            labels, s_grid, CostParams(gamma=gamma, lambda_size=lambda_size),
            seed + 1000003, k_max,
        )
        header = ["s", "n_preds", "f1_one_to_one", "f1_many_to_one", "f1_one_to_many", "bf1"]
        table = [[r[h] for h in header] for r in rows]
    elif sweep == "p1":
        p1_grid = _opt(args, cfg, "p1_grid", _floats, [0.3, 0.5, 0.7, 0.9])
        pred_model = PredictionNoiseModel(p1_pred=p1_pred, poisson_rate=rate)
        header, table = _sweep_rows_graph(
            "p1_label",
            p1_grid,
            lambda p1: LabelNoiseModel(p1_label=p1, poisson_rate=rate),
            pred_model,
            n_real,
            seed,
        )
    elif sweep == "bias":
        bias_grid = _opt(args, cfg, "bias_grid", _floats, [-0.6, 0.0, 0.6])
        pred_model = PredictionNoiseModel(p1_pred=p1_pred, poisson_rate=rate)
        header, table = _sweep_rows_graph(
            "bias",
            bias_grid,
            lambda b: LabelNoiseModel(p1_label=p1_label, poisson_rate=rate, bias=b),
            pred_model,
            n_real,
            seed,
        )
    else:
        raise ValueError(f"unknown sweep {sweep!r} (expected s, p1 or bias)")
    _emit(_csv_text(header, table), args.out)
    return 0


def cmd_posterior(args) -> int:
    cfg = _load_cfg(args)
    rate = _opt(args, cfg, "rate", float, 0.25)
    p_identity = _opt(args, cfg, "p1", float, 0.44)
    merge_w = _opt(args, cfg, "merge_weight", float, 0.07)
    split_w = _opt(args, cfg, "split_weight", float, 0.06)
    grid_spec = _opt(args, cfg, "grid", str, "1.0,60")
    literal = bool(_opt(args, cfg, "literal_split", bool, False))
    step_s, _, count_s = grid_spec.partition(",")
    step, count = float(step_s), int(count_s or "60")
    grid = step * np.arange(1, count + 1)
    prior_path = _opt(args, cfg, "prior", str, None)
    if prior_path:
        cds = []
        with open(prior_path, encoding="utf-8") as fh:
            for line in fh:
                cell = line.strip().split(",")[0]
                if not cell:
                    continue
                try:
                    cds.append(float(cell))
                except ValueError:
                    continue  # header line
        prior = prior_from_crown_diameters(cds, grid)
    else:
        prior = np.full(grid.size, 1.0 / grid.size)
    model = PosteriorModel(
        grid=grid,
        prior=prior,
        p_identity=p_identity,
        merge_weight=merge_w,
        split_weight=split_w,
        poisson_rate=rate,
        literal_split_branch=literal,
    )
    # a narrow prior can make some labeled CAs unreachable (zero joint
    # mass); emit only the defined rows and tally the rest on stderr
    joint = likelihood_matrix(model) * model.prior[:, None]
    mass = joint.sum(axis=0)
    keep = mass > 0
    if not keep.any():
        raise ValueError("prior leaves no labeled CA with positive mass")
    post = np.zeros_like(joint)
    post[:, keep] = joint[:, keep] / mass[keep][None, :]
    ent = posterior_entropy(post)
    header = ["ca_label", "entropy"] + [f"p_real_{g!r}" for g in grid.tolist()]
    rows = [
        [grid[j], ent[j]] + post[:, j].tolist()
        for j in range(grid.size)
        if keep[j]
    ]
    dropped = int(grid.size - keep.sum())
    if dropped:
        print(
            f"dropped {dropped} labeled-CA rows with zero prior mass",
            file=sys.stderr,
        )
    _emit(_csv_text(header, rows), args.out)
    return 0


def _parse_transform(token: str):
    token = token.strip()
    if token.startswith("rescale:"):
        return ("rescale", float(token.split(":", 1)[1]))
    if token in ("identity", "hflip", "vflip", "rot90", "rot180", "rot270"):
        return token
    raise ValueError(f"unknown transform {token!r}")


def cmd_heatmap(args) -> int:
    cfg = _load_cfg(args)
    action = args.action
    if action == "encode":
        trees_path = _opt(args, cfg, "trees", str, None)
        out = args.out or cfg.get("out")
        if not trees_path or not out:
            raise ValueError("heatmap encode needs --trees and --out")
        width = int(_opt(args, cfg, "width", int, 256))
        height = int(_opt(args, cfg, "height", int, 256))
        resolution = _opt(args, cfg, "resolution", float, 0.2)
        ratio = _opt(args, cfg, "sigma_ratio", float, 0.25)
        clip = bool(_opt(args, cfg, "clip", bool, False))
        spec = RasterSpec(width=width, height=height, resolution=resolution)
        trees = _flat(tio.load_trees(trees_path))
        hm = encode(trees, spec, lambda cd_px: ratio * cd_px, clip_to_polygons=clip)
        write_raster(out, hm)
        return 0

    inputs = args.input or ([cfg["input"]] if "input" in cfg else [])
    if not inputs:
        raise ValueError(f"heatmap {action} needs at least one input raster")

    if action == "decode":
        raster = read_raster(inputs[0])
        if not isinstance(raster, Heatmap):
            raise ValueError("decode expects an HMAP file")
        nms_window = int(_opt(args, cfg, "nms_window", int, 11))
        window = int(_opt(args, cfg, "window", int, 25))
        size_map_path = _opt(args, cfg, "size_map", str, None)
        patch_id = Path(inputs[0]).stem
        if size_map_path:
            threshold = _opt(args, cfg, "threshold", float, 0.5)
            params = DecodeParams(
                nms_window=nms_window, peak_threshold=threshold, patch_window=window
            )
            size_raster = read_raster(size_map_path)
            if not isinstance(size_raster, SizeMap):
                raise ValueError("--size-map expects an SMAP file")
            trees, dropped = decode_centernet(raster, size_raster, params, patch_id)
            if dropped:
                print(f"dropped {dropped} peaks with invalid size", file=sys.stderr)
        else:
            threshold = _opt(args, cfg, "threshold", float, 0.6)
            params = DecodeParams(
                nms_window=nms_window, peak_threshold=threshold, patch_window=window
            )
            ratio = _opt(args, cfg, "sigma_ratio", float, 0.25)
            bank = build_filter_bank(
                n=int(_opt(args, cfg, "bank_n", int, 48)),
                sigma_min=_opt(args, cfg, "sigma_min", float, 0.3),
                sigma_max=_opt(args, cfg, "sigma_max", float, 25.0),
                window=window,
            )
            trees = decode_heatmap(
                raster, bank, params, lambda s: s / ratio, patch_id
            )
        _emit(_trees_csv_text(trees), args.out)
        return 0

    if action == "merge":
        out = args.out or cfg.get("out")
        if not out:
            raise ValueError("heatmap merge needs --out")
        transforms_text = _opt(args, cfg, "transforms", str, None)
        rasters = [read_raster(p) for p in inputs]
        if not all(isinstance(r, Heatmap) for r in rasters):
            raise ValueError("merge expects HMAP files")
        transforms = None
        if transforms_text:
            transforms = [_parse_transform(t) for t in transforms_text.split(",")]
        merged = merge_heatmaps(rasters, transforms)
        write_raster(out, merged)
        return 0

    if action == "separate":
        raster = read_raster(inputs[0])
        if not isinstance(raster, Heatmap):
            raise ValueError("separate expects an HMAP mask file")
        w_max = int(_opt(args, cfg, "w_max", int, 15))
        w_maj = int(_opt(args, cfg, "w_maj", int, 23))
        mask = raster.values > 0.5
        _, trees = separate_instances(
            mask, raster.spec, w_max=w_max, w_maj=w_maj, patch_id=Path(inputs[0]).stem
        )
        _emit(_trees_csv_text(trees), args.out)
        return 0

    raise ValueError(f"unknown heatmap action {action!r}")


def cmd_agree(args) -> int:
    cfg = _load_cfg(args)
    path_a = _opt(args, cfg, "labels_a", str, None)
    path_b = _opt(args, cfg, "labels_b", str, None)
    if not path_a or not path_b:
        raise ValueError("agree needs --labels-a and --labels-b")
    gamma = _opt(args, cfg, "gamma", float, 1.0)
    lambda_size = _opt(args, cfg, "lambda_size", float, 0.1)
    k_max = int(_opt(args, cfg, "kmax", int, 10))
    table = agreement_analysis(
        _flat(tio.load_trees(path_a)),
        _flat(tio.load_trees(path_b)),
        CostParams(gamma=gamma, lambda_size=lambda_size),
        k_max,
    )
    rows = [["components", "", table["components"]]]
    rows.append(["degree_0", 0, table["degree_0_pct"]])
    rows.append(["identity", 1, table["identity_pct"]])
    for k, pct in table["split_pct"].items():
        rows.append(["split", k, pct])
    for k, pct in table["merge_pct"].items():
        rows.append(["merge", k, pct])
    rows.append(["n_to_m", "", table["n_to_m_pct"]])
    _emit(_csv_text(["category", "degree", "value"], rows), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canopy-metrics",
        description="Evaluation, simulation and heatmap decoding for tree maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("eval", help="score predictions against labels")
    common(p)
    p.add_argument("--labels")
    p.add_argument("--preds")
    p.add_argument("--gamma", type=_floats, help="comma list, default 0.5,1,2")
    p.add_argument("--lambda-size", dest="lambda_size", type=float)
    p.add_argument("--kmax", type=int)
    p.add_argument("--resolution", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--area-metrics", dest="area_metrics", action="store_true", default=None)
    p.add_argument("--format", choices=("json", "csv"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="noise-model sweeps (plot-ready CSV)")
    common(p)
    p.add_argument("--sweep", choices=("s", "p1", "bias"))
    p.add_argument("--labels")
    p.add_argument("--synthetic", type=int, help="generate this many synthetic labels")
    p.add_argument("--s-grid", dest="s_grid", type=_floats)
    p.add_argument("--p1-grid", dest="p1_grid", type=_floats)
    p.add_argument("--bias-grid", dest="bias_grid", type=_floats)
    p.add_argument("--n-real", dest="n_real", type=int)
    p.add_argument("--p1-label", dest="p1_label", type=float)
    p.add_argument("--p1-pred", dest="p1_pred", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-size", dest="lambda_size", type=float)
    p.add_argument("--kmax", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("posterior", help="real-CA posterior and entropy table")
    common(p)
    p.add_argument("--prior", help="CSV of measured crown diameters (m)")
    p.add_argument("--p1", type=float, help="identity agreement weight")
    p.add_argument("--rate", type=float)
    p.add_argument("--merge-weight", dest="merge_weight", type=float)
    p.add_argument("--split-weight", dest="split_weight", type=float)
    p.add_argument("--grid", help="step,count of the CA grid")
    p.add_argument("--literal-split", dest="literal_split", action="store_true", default=None)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("heatmap", help="encode/decode/merge/separate rasters")
    common(p)
    p.add_argument("action", choices=("encode", "decode", "merge", "separate"))
    p.add_argument("--input", nargs="*", help="input raster file(s)")
    p.add_argument("--trees")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--resolution", type=float)
    p.add_argument("--sigma-ratio", dest="sigma_ratio", type=float)
    p.add_argument("--clip", action="store_true", default=None)
    p.add_argument("--size-map", dest="size_map")
    p.add_argument("--bank-n", dest="bank_n", type=int)
    p.add_argument("--sigma-min", dest="sigma_min", type=float)
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--nms-window", dest="nms_window", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--transforms")
    p.add_argument("--w-max", dest="w_max", type=int)
    p.add_argument("--w-maj", dest="w_maj", type=int)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("agree", help="annotator-agreement degree table")
    common(p)
    p.add_argument("--labels-a", dest="labels_a")
    p.add_argument("--labels-b", dest="labels_b")
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-size", dest="lambda_size", type=float)
    p.add_argument("--kmax", type=int)
    p.set_defaults(func=cmd_agree)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
