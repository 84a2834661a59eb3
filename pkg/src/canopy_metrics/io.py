"""Tree tables, report documents, and the flat config file format.

A tree table is a UTF-8 CSV with header patch_id,x,y,crown_area,score,
polygon.  Score and polygon may be empty; the polygon column uses the
WKT-style form POLYGON((x y, x y, ...)).  When a polygon is present the
crown area is recomputed from it, and a stated crown_area that disagrees
by more than 1% triggers a warning.
"""

from __future__ import annotations

import csv
import json
import re
import warnings

import numpy as np

from .geometry import Polygon, TreeRecord

__all__ = [
    "TREE_TABLE_HEADER",
    "parse_wkt_polygon",
    "format_wkt_polygon",
    "load_trees",
    "save_trees",
    "load_config_file",
    "report_json",
    "report_csv_rows",
]

TREE_TABLE_HEADER = ["patch_id", "x", "y", "crown_area", "score", "polygon"]

_WKT_RE = re.compile(r"^POLYGON\s*\(\(\s*(.*?)\s*\)\)$")


def parse_wkt_polygon(text: str) -> Polygon:
    m = _WKT_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a POLYGON((...)) string: {text!r}")
    vertices = []
    for pair in m.group(1).split(","):
        parts = pair.split()
        if len(parts) != 2:
            raise ValueError(f"bad polygon vertex {pair!r}")
        vertices.append((float(parts[0]), float(parts[1])))
    return Polygon(tuple(vertices))


def format_wkt_polygon(poly: Polygon) -> str:
    ring = list(poly.vertices) + [poly.vertices[0]]
    inner = ", ".join(f"{x!r} {y!r}" for x, y in ring)
    return f"POLYGON(({inner}))"


def _parse_row(row):
    patch_id = row[0].strip()
    if not patch_id:
        raise ValueError("empty patch_id")
    poly = parse_wkt_polygon(row[5]) if row[5].strip() else None
    xs, ys = row[1].strip(), row[2].strip()
    if xs and ys:
        center = (float(xs), float(ys))
    elif poly is not None:
        center = poly.centroid
    else:
        raise ValueError("row has neither x,y nor a polygon to take a center from")
    ca_text = row[3].strip()
    stated_ca = float(ca_text) if ca_text else None
    if poly is not None:
        ca = poly.area
        if stated_ca is not None and abs(stated_ca - ca) > 0.01 * ca:
            warnings.warn(
                f"crown_area {stated_ca} deviates more than 1% from the "
                f"polygon area {ca:.6g}; using the polygon area",
                stacklevel=3,
            )
    elif stated_ca is not None:
        ca = stated_ca
    else:
        raise ValueError("row has neither crown_area nor a polygon")
    score_text = row[4].strip()
    score = float(score_text) if score_text else None
    return TreeRecord(
        patch_id=patch_id, center=center, crown_area=ca, score=score, polygon=poly
    )


def load_trees(path) -> dict[str, list[TreeRecord]]:
    """Read a tree table, grouped by patch in file order.

    Any malformed row fails with its line number; rows with non-positive
    crown area are rejected the same way.
    """
    groups: dict[str, list[TreeRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TREE_TABLE_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(TREE_TABLE_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TREE_TABLE_HEADER):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(TREE_TABLE_HEADER)} "
                    f"columns, got {len(row)}"
                )
            try:
                record = _parse_row(row)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(record.patch_id, []).append(record)
    return groups


def save_trees(path, records) -> None:
    """Write records (flat iterable) as a tree table; floats are written
    with repr so a load sees the same values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TREE_TABLE_HEADER)
        for t in records:
            writer.writerow(
                [
                    t.patch_id,
                    repr(float(t.center[0])),
                    repr(float(t.center[1])),
                    repr(float(t.crown_area)),
                    "" if t.score is None else repr(float(t.score)),
                    "" if t.polygon is None else format_wkt_polygon(t.polygon),
                ]
            )


def load_config_file(path) -> dict[str, str]:
    """Flat key=value file; blank lines and #-comments are skipped."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _plain(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def report_json(report: dict) -> str:
    """Byte-stable JSON text: sorted keys, two-space indent, newline at
    the end."""
    return json.dumps(report, sort_keys=True, indent=2, default=_plain) + "\n"


def report_csv_rows(report: dict):
    """Flatten a report into plot-ready rows (one per gamma x scheme);
    the JSON document stays the source of truth."""
    header = [
        "gamma",
        "scheme",
        "tp",
        "fp",
        "fn",
        "precision",
        "recall",
        "f1",
        "bf1",
        "e_loc_m",
        "e_ca_m2",
        "counting_nmae_pct",
    ]
    rows = []
    nmae = report.get("counting_nmae_pct")
    for entry in report["per_gamma"]:
        for scheme in ("one_to_one", "many_to_one", "one_to_many"):
            s = entry["schemes"][scheme]
            rows.append(
                [
                    entry["gamma"],
                    scheme,
                    s["tp"],
                    s["fp"],
                    s["fn"],
                    s["precision"],
                    s["recall"],
                    s["f1"],
                    entry["bf1"],
                    entry["e_loc_m"],
                    entry["e_ca_m2"],
                    nmae,
                ]
            )
    return header, rows
