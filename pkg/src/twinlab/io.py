"""Versioned file formats and CSV exports.

Documents carry explicit schema versions so pipeline stages can compose
through files:

- ``twinlab-tess/1``   JSON: domain, generators, weights, cells
  (vertices/faces/neighbors), optional orientation marks, optional
  lamellar systems and subcell records (the nested extension).
- ``twinlab-elem/1``   CSV: per-element centroid, volume, stress and
  strain components (6 each); first line is a ``# twinlab-elem/1`` tag.
- ``twinlab-tsed/1``   CSV: per-variant strain-energy summaries
  (epsilon_m, kappa, marking, w_total, w_lamella, w_matrix).

Serialization is deterministic: keys are sorted, floats use shortest
round-trip repr, and all collections are emitted in index order, so a
rerun with the same seed produces byte-identical files.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .energy import ElementRecord, symmetric_tensor
from .lamellae import Lamella, LamellarSystem, NestedTessellation, Subcell
from .orientation import Orientation
from .polytope import Box, ConvexPolytope, FeretInterval
from .regression import TsedRecord
from .tessellation import LaguerreTessellation

TESS_SCHEMA = "twinlab-tess/1"
ELEM_SCHEMA = "twinlab-elem/1"
TSED_SCHEMA = "twinlab-tsed/1"

ELEM_COLUMNS = ("element_id", "cx", "cy", "cz", "volume",
                "s11", "s22", "s33", "s12", "s13", "s23",
                "e11", "e22", "e33", "e12", "e13", "e23")
TSED_COLUMNS = ("epsilon_m", "kappa", "marking",
                "w_total", "w_lamella", "w_matrix")


class SchemaError(ValueError):
    """Input document does not carry the expected schema version."""


def _floatlist(a):
    return [float(v) for v in np.asarray(a).ravel()]


def _poly_doc(p):
    return {
        "vertices": [_floatlist(v) for v in p.vertices],
        "faces": [list(f) for f in p.faces],
    }


def _poly_from_doc(doc):
    if not doc["faces"]:
        return ConvexPolytope.empty()
    return ConvexPolytope(np.asarray(doc["vertices"], dtype=float),
                          doc["faces"])


def tessellation_document(tess, marks=None, nested=None, meta=None):
    """Build the twinlab-tess/1 JSON document (plain dict)."""
    doc = {
        "schema": TESS_SCHEMA,
        "domain": {"lo": list(tess.domain.lo), "hi": list(tess.domain.hi)},
        "generators": [
            {"x": _floatlist(x), "w": float(w)}
            for x, w in zip(tess.points, tess.weights)
        ],
        "cells": [
            {"id": i, "empty": c.is_empty,
             "neighbors": list(tess.adjacency[i]),
             **({} if c.is_empty else _poly_doc(c))}
            for i, c in enumerate(tess.cells)
        ],
    }
    if marks is not None:
        doc["marks"] = {str(cid): _floatlist(marks[cid].quat)
                        for cid in sorted(marks)}
    if nested is not None:
        doc["systems"] = {
            str(cid): {
                "direction": _floatlist(s.direction),
                "anchor": _floatlist(s.feret.anchor),
                "alpha": float(s.feret.alpha),
                "beta": float(s.feret.beta),
                "d": [float(l.d) for l in s.lamellae],
                "w": [float(l.w) for l in s.lamellae],
                "achieved_fraction": float(s.achieved_fraction),
            }
            for cid, s in sorted(nested.systems.items())
        }
        doc["subcells"] = [
            {"cell_id": s.cell_id, "phase": s.phase,
             "lamella_index": s.lamella_index,
             "mark": _floatlist(s.mark.quat),
             **_poly_doc(s.polytope)}
            for s in nested.subcells
        ]
    if meta is not None:
        doc["meta"] = meta
    return doc


def write_tessellation(path, tess, marks=None, nested=None, meta=None):
    doc = tessellation_document(tess, marks, nested, meta)
    Path(path).write_text(dumps(doc))


def dumps(doc):
    """Deterministic JSON text: sorted keys, no whitespace churn."""
    return json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1)


def read_tessellation(path):
    """Read a twinlab-tess/1 document.

    Returns
    -------
    dict with keys "tess" (LaguerreTessellation), "marks"
    (dict cell_id -> Orientation or None), "nested" (NestedTessellation or
    None) and "meta".
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != TESS_SCHEMA:
        raise SchemaError(f"expected {TESS_SCHEMA}, got {doc.get('schema')!r}")
    domain = Box(tuple(doc["domain"]["lo"]), tuple(doc["domain"]["hi"]))
    points = np.array([g["x"] for g in doc["generators"]], dtype=float)
    weights = np.array([g["w"] for g in doc["generators"]], dtype=float)
    cells = []
    adjacency = []
    for c in doc["cells"]:
        adjacency.append(list(c.get("neighbors", [])))
        cells.append(ConvexPolytope.empty() if c["empty"] else _poly_from_doc(c))
    tess = LaguerreTessellation(domain, points, weights, cells, adjacency)

    marks = None
    if "marks" in doc:
        marks = {int(k): Orientation.from_quat(q)
                 for k, q in doc["marks"].items()}

    nested = None
    if "subcells" in doc:
        subcells = [
            Subcell(s["cell_id"], s["phase"], _poly_from_doc(s),
                    Orientation.from_quat(s["mark"]), s["lamella_index"])
            for s in doc["subcells"]
        ]
        systems = {}
        for k, s in doc.get("systems", {}).items():
            cid = int(k)
            direction = np.asarray(s["direction"], dtype=float)
            f = FeretInterval(s["alpha"], s["beta"], s["beta"] - s["alpha"],
                              direction, np.asarray(s["anchor"], dtype=float))
            lam_polys = {sc.lamella_index: sc.polytope
                         for sc in subcells
                         if sc.cell_id == cid and sc.phase == "lamella"}
            lams = tuple(
                Lamella(d, w, lam_polys.get(i, ConvexPolytope.empty()))
                for i, (d, w) in enumerate(zip(s["d"], s["w"])))
            systems[cid] = LamellarSystem(cid, direction, f, lams,
                                          s["achieved_fraction"])
        nested = NestedTessellation(tess, systems, subcells)
    return {"tess": tess, "marks": marks, "nested": nested,
            "meta": doc.get("meta")}


def write_elements_csv(path, records, metadata=None):
    """Write element records as twinlab-elem/1 (phase goes to a sidecar)."""
    lines = [f"# {ELEM_SCHEMA}"]
    if metadata and metadata.get("synthetic"):
        lines.append("# synthetic data, not FEM output")
    lines.append(",".join(ELEM_COLUMNS))
    for r in records:
        s, e = r.stress, r.strain
        row = [str(r.element_id)] + [repr(float(v)) for v in (
            r.centroid[0], r.centroid[1], r.centroid[2], r.volume,
            s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[0, 2], s[1, 2],
            e[0, 0], e[1, 1], e[2, 2], e[0, 1], e[0, 2], e[1, 2])]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_elements_csv(path):
    """Read twinlab-elem/1 element records (phases unset)."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(f"# {ELEM_SCHEMA}"):
        raise SchemaError(f"missing '# {ELEM_SCHEMA}' tag")
    rows = [ln for ln in text if not ln.startswith("#")]
    reader = csv.DictReader(rows)
    if tuple(reader.fieldnames) != ELEM_COLUMNS:
        raise SchemaError(f"unexpected columns {reader.fieldnames}")
    records = []
    for row in reader:
        records.append(ElementRecord(
            int(row["element_id"]),
            (float(row["cx"]), float(row["cy"]), float(row["cz"])),
            float(row["volume"]),
            symmetric_tensor(float(row["s11"]), float(row["s22"]),
                             float(row["s33"]), float(row["s12"]),
                             float(row["s13"]), float(row["s23"])),
            symmetric_tensor(float(row["e11"]), float(row["e22"]),
                             float(row["e33"]), float(row["e12"]),
                             float(row["e13"]), float(row["e23"])),
            "matrix"))
    return records


def write_tsed_csv(path, records):
    lines = [f"# {TSED_SCHEMA}", ",".join(TSED_COLUMNS)]
    for r in records:
        lines.append(",".join([repr(float(r.epsilon_m)),
                               repr(float(r.kappa)), r.marking,
                               repr(float(r.w_total)),
                               repr(float(r.w_lamella)),
                               repr(float(r.w_matrix))]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tsed_csv(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(f"# {TSED_SCHEMA}"):
        raise SchemaError(f"missing '# {TSED_SCHEMA}' tag")
    rows = [ln for ln in text if not ln.startswith("#")]
    reader = csv.DictReader(rows)
    if tuple(reader.fieldnames) != TSED_COLUMNS:
        raise SchemaError(f"unexpected columns {reader.fieldnames}")
    return [TsedRecord(float(r["epsilon_m"]), float(r["kappa"]),
                       r["marking"], float(r["w_total"]),
                       float(r["w_lamella"]), float(r["w_matrix"]))
            for r in reader]


def write_rows_csv(path, header, rows):
    """Generic deterministic CSV: floats via repr, everything else str."""
    lines = [",".join(header)]
    for row in rows:
        cells = [repr(float(v)) if isinstance(v, (float, np.floating))
                 else str(v) for v in row]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_twin_csv(path, states, volumes):
    """Per-cell twin-state export."""
    rows = []
    for cid in sorted(states):
        st = states[cid]
        rows.append((cid, volumes[cid], st.propensity, st.psi_crit,
                     int(st.decision), st.e_scalar, st.v_t,
                     st.n_vec[0], st.n_vec[1], st.n_vec[2]))
    write_rows_csv(path, ("cell_id", "volume", "propensity", "psi_crit",
                          "decision", "e_scalar", "v_t", "n_x", "n_y", "n_z"),
                   rows)


def write_lamellae_csv(path, systems):
    """Per-lamella export with Feret-normalized geometry."""
    rows = []
    for cid in sorted(systems):
        s = systems[cid]
        f = s.feret
        for k, lam in enumerate(s.lamellae):
            rows.append((cid, k, (lam.d - f.alpha) / f.rho, lam.w / f.rho,
                         lam.polytope.volume))
    write_rows_csv(path, ("cell_id", "lamella_index", "d_normalized",
                          "w_normalized", "volume"), rows)


def write_histogram_csv(path, hist):
    rows = [(float(hist.bin_edges[i]), float(hist.bin_edges[i + 1]),
             int(hist.counts[i])) for i in range(len(hist.counts))]
    write_rows_csv(path, ("bin_left", "bin_right", "count"), rows)


def write_kde_csv(path, kde):
    rows = []
    for iy, y in enumerate(kde.grid_y):
        for ix, x in enumerate(kde.grid_x):
            rows.append((float(x), float(y), float(kde.density[iy, ix])))
    write_rows_csv(path, ("x", "y", "density"), rows)


def write_ipf_csv(path, records):
    write_rows_csv(path, ("id", "x", "y", "phase"), records)


def write_model_table_csv(path, fit):
    write_rows_csv(path, ("coefficient", "estimate", "std_error",
                          "t_value", "p_value"),
                   [(n, b, s, t, round(p, 4)) for n, b, s, t, p in fit.table()])
