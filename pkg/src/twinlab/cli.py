"""Command-line interface.

Subcommands mirror the pipeline stages and compose through the documented
file formats, so any stage can be rerun from its inputs:

    tess, mark, twin, lamellae, nest, stats, energy-synth,
    ingest-elements, regress, pipeline

Exit codes: 0 success, 2 configuration/input error, 3 stage failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .energy import classify_records, phase_tsed, synthesize_elements
from .lamellae import (LamellaParams, Unresolvable, anneal_lamellae,
                       build_nested, clip_to_window, grow_lamellae,
                       rebuild_polytopes)
from .orientation import OdfParams, moving_average_marks, sample_odf_many, \
    sample_uniform_many
from .pipeline import (PipelineError, RunConfig, run_pipeline, stage_rng,
                       evaluate_twinning, twin_states_for_strain,
                       variant_label)
from .polytope import Box
from .regression import TsedRecord, fit_cubic_pair, fit_design, MODEL_SPECS, \
    paper_model_suite
from .stats import histogram, ipf_dataset, kde2, lamella_count_frequencies, \
    normalized_geometry
from .tessellation import (build_laguerre, fit_weights,
                           gaussian_volume_targets, inner_cells, plus_sample,
                           poisson_generators)

log = logging.getLogger("twinlab")


def _domain(margin):
    return Box((-margin,) * 3, (1.0 + margin,) * 3)


def cmd_tess(args):
    domain = _domain(args.margin)
    rng = stage_rng(args.seed, "tess")
    if args.n is not None:
        points = domain.sample(args.n, rng)
    else:
        points = poisson_generators(args.intensity, domain, rng)
    targets = gaussian_volume_targets(len(points), args.mu, args.sigma,
                                      domain.volume, rng)
    weights = fit_weights(points, targets, domain, tol=args.tol)
    tess = build_laguerre((points, weights), domain)
    errs = np.abs(tess.cell_volumes() - targets.values) / targets.values
    tio.write_tessellation(args.out, tess,
                           meta={"max_volume_error": float(errs.max()),
                                 "tolerance": args.tol})
    print(f"{len(points)} generators, max relative volume error "
          f"{errs.max():.4f} -> {args.out}")


def cmd_mark(args):
    doc = tio.read_tessellation(args.tess)
    tess = doc["tess"]
    ids = tess.nonempty_indices()
    marking = "ma" if args.ma else "im"
    label = variant_label(marking, args.kappa)
    marks = {}
    if marking == "im" and args.kappa > 0:
        params = OdfParams(args.kappa, tuple(args.u), tuple(args.v))
        for cid in ids:
            rng = stage_rng(args.seed, "mark", label, cid)
            marks[cid] = sample_odf_many(params, 1, rng)[0]
    else:
        for cid in ids:
            rng = stage_rng(args.seed, "mark", label, cid)
            marks[cid] = sample_uniform_many(1, rng)[0]
    if marking == "ma":
        pos = {cid: k for k, cid in enumerate(ids)}
        adj = [[pos[j] for j in tess.adjacency[cid]] for cid in ids]
        averaged = moving_average_marks(adj, [marks[cid] for cid in ids])
        marks = {cid: averaged[pos[cid]] for cid in ids}
    tio.write_tessellation(args.out, tess, marks=marks,
                           meta={"marking": marking, "kappa": args.kappa})
    print(f"marked {len(marks)} cells ({label}) -> {args.out}")


def _twin_base(args, tess, marks):
    cfg = RunConfig(psi1=args.psi1, psi2=args.psi2,
                    loading=tuple(args.loading),
                    hall_petch_orientation=args.hall_petch,
                    output_dir=".")
    window = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    q_hit = plus_sample(tess, window)
    sim = sorted(set(q_hit) | set(inner_cells(tess)))
    base, params, system = evaluate_twinning(cfg, tess, marks, q_hit, sim)
    return base, q_hit, sim


def cmd_twin(args):
    doc = tio.read_tessellation(args.tess)
    tess, marks = doc["tess"], doc["marks"]
    if marks is None:
        raise tio.SchemaError("document carries no orientation marks")
    base, q_hit, sim = _twin_base(args, tess, marks)
    states = twin_states_for_strain(base, args.epsilon_m)
    vols = {cid: tess.cells[cid].volume for cid in sim}
    tio.write_twin_csv(args.out, states, vols)
    frac = float(np.mean([states[cid].decision for cid in q_hit]))
    print(f"{len(states)} cells, twinned fraction (window cells) "
          f"{frac:.3f} -> {args.out}")


def _read_twin_csv(path):
    import csv
    rows = [ln for ln in Path(path).read_text().splitlines()
            if not ln.startswith("#")]
    out = {}
    for row in csv.DictReader(rows):
        out[int(row["cell_id"])] = {
            "decision": bool(int(row["decision"])),
            "v_t": float(row["v_t"]),
            "n_vec": np.array([float(row["n_x"]), float(row["n_y"]),
                               float(row["n_z"])]),
        }
    return out


def cmd_lamellae(args):
    doc = tio.read_tessellation(args.tess)
    tess = doc["tess"]
    twin = _read_twin_csv(args.twin)
    params = LamellaParams(l_max=args.l_max, xi=args.xi, gamma=args.gamma,
                           zeta1=args.zeta1, zeta2=args.zeta2,
                           theta=tuple(args.theta),
                           poisson_lambda=args.poisson_lambda)
    grow = grow_lamellae if args.method == "growth" else anneal_lamellae
    systems = {}
    failed = []
    for cid, entry in sorted(twin.items()):
        if not entry["decision"] or not 0 < entry["v_t"] < 1:
            continue
        rng = stage_rng(args.seed, "lamellae", args.variant, cid)
        try:
            systems[cid] = grow(tess.cells[cid], entry["n_vec"],
                                entry["v_t"], params, rng, cell_id=cid)
        except Unresolvable as exc:
            log.warning("%s", exc)
            failed.append(cid)
    from .lamellae import NestedTessellation
    tio.write_tessellation(args.out, tess,
                           nested=NestedTessellation(tess, systems, []),
                           meta={"failed_cells": failed})
    if args.csv:
        tio.write_lamellae_csv(args.csv, systems)
    print(f"{len(systems)} lamellar systems ({len(failed)} unresolvable) "
          f"-> {args.out}")


def cmd_nest(args):
    doc = tio.read_tessellation(args.tess)
    tess, marks = doc["tess"], doc["marks"]
    if marks is None:
        raise tio.SchemaError("marked tessellation required")
    sysdoc = tio.read_tessellation(args.systems)
    if sysdoc["nested"] is None:
        raise tio.SchemaError("systems document carries no lamellar systems")
    systems = {cid: rebuild_polytopes(s, tess.cells[cid])
               for cid, s in sysdoc["nested"].systems.items()}
    base, q_hit, sim = _twin_base(args, tess, marks)
    states = twin_states_for_strain(base, args.epsilon_m)
    nested = build_nested(tess, marks, states,
                          {cid: s for cid, s in systems.items()
                           if cid in set(q_hit)},
                          cell_ids=q_hit)
    window = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    if args.clip:
        nested = clip_to_window(nested, window)
    tio.write_tessellation(args.out, tess, marks=marks, nested=nested,
                           meta={"clipped": bool(args.clip)})
    print(f"{len(nested.subcells)} subcells -> {args.out}")


def cmd_stats(args):
    doc = tio.read_tessellation(args.nested)
    tess, nested = doc["tess"], doc["nested"]
    if nested is None:
        raise tio.SchemaError("nested tessellation required")
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    inner = inner_cells(tess)
    systems = nested.systems
    freqs = lamella_count_frequencies(systems, inner, args.l_max)
    tio.write_rows_csv(outdir / "counts.csv", ("k", "frequency"),
                       [(k + 1, float(f)) for k, f in enumerate(freqs)])
    geom = normalized_geometry(systems)
    tio.write_rows_csv(outdir / "geometry.csv",
                       ("cell_id", "lamella_index", "d_normalized",
                        "w_normalized", "two_lamellae"),
                       [(c, k, d, w, int(t)) for c, k, d, w, t in geom])
    for idx in (0, 1):
        pts = np.array([(d, w) for c, k, d, w, two in geom if two and k == idx])
        if len(pts) >= 2:
            tio.write_kde_csv(outdir / f"kde_lamella{idx + 1}.csv", kde2(pts))
    if doc["marks"]:
        before = ipf_dataset(doc["marks"])
        tio.write_ipf_csv(outdir / "ipf_before.csv", before)
    after = ipf_dataset(nested)
    tio.write_ipf_csv(outdir / "ipf_after.csv", after)
    print(f"statistics -> {outdir}")


def cmd_energy_synth(args):
    doc = tio.read_tessellation(args.nested)
    if doc["nested"] is None:
        raise tio.SchemaError("nested tessellation required")
    window = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    rng = stage_rng(args.seed, "energy", "cli")
    records, meta = synthesize_elements(
        doc["nested"], window, rng, density=args.density,
        lamella_energy=args.scales[0], matrix_energy=args.scales[1],
        noise=args.noise)
    tio.write_elements_csv(args.out, records, metadata=meta)
    print(f"{len(records)} synthetic elements -> {args.out}")


def cmd_ingest_elements(args):
    doc = tio.read_tessellation(args.nested)
    if doc["nested"] is None:
        raise tio.SchemaError("nested tessellation required")
    records = tio.read_elements_csv(args.elements)
    window = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    records = classify_records(records, doc["nested"], window=window)
    result = phase_tsed(records)
    row = TsedRecord(args.epsilon_m, args.kappa, args.marking,
                     result.w_total, result.w_lamella or 0.0,
                     result.w_matrix or 0.0)
    rows = []
    if args.append and Path(args.out).exists():
        rows = tio.read_tsed_csv(args.out)
    rows.append(row)
    tio.write_tsed_csv(args.out, rows)
    print(f"W={result.w_total:.4f} W_L={result.w_lamella} "
          f"W_M={result.w_matrix} (straddling {result.straddling_count}) "
          f"-> {args.out}")


def cmd_regress(args):
    records = tio.read_tsed_csv(args.input)
    out = Path(args.out)
    if args.model == "suite":
        suite = paper_model_suite(records)
        out.mkdir(parents=True, exist_ok=True)
        for name, fit in suite.items():
            if fit is not None:
                tio.write_model_table_csv(out / f"model_{name}.csv", fit)
        print(f"model suite -> {out}")
        return
    if args.model == "cubic_pair":
        fit = fit_cubic_pair(records)
    else:
        im = [r for r in records if r.marking == "im"]
        eps = np.array([r.epsilon_m for r in im])
        kap = np.array([r.kappa for r in im])
        column = {"m1": "w_total", "m1p": "w_total",
                  "m2": "w_lamella", "m3": "w_matrix"}[args.model]
        y = np.array([getattr(r, column) for r in im])
        fit = fit_design(MODEL_SPECS[args.model], eps, kap, y)
    tio.write_model_table_csv(out, fit)
    print(f"model {args.model} -> {out}")


def cmd_pipeline(args):
    if args.config:
        config = RunConfig.from_toml(args.config)
    else:
        config = RunConfig.paper_profile()
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        import dataclasses
        config = dataclasses.replace(config, **overrides)
    summary = run_pipeline(config, dry_run=args.dry_run)
    if args.dry_run:
        print("plan:", ", ".join(summary["variants"]))
    else:
        print(f"{len(summary['variants'])} variants -> {config.output_dir}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="twinlab",
        description="Nested Laguerre tessellations for deformation twinning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tess", help="generate a tessellation and fit weights")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n", type=int, help="exact number of generators")
    g.add_argument("--intensity", type=float, default=100.0,
                   help="Poisson intensity per unit window volume")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--mu", type=float, default=5.1)
    p.add_argument("--sigma", type=float, default=1.3)
    p.add_argument("--out", default="tess.json")
    p.set_defaults(func=cmd_tess)

    p = sub.add_parser("mark", help="sample orientation marks")
    p.add_argument("--tess", required=True)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--ma", action="store_true",
                   help="moving-average dependent marking (kappa = 0)")
    p.add_argument("--u", type=float, nargs=3, default=[0.0, 0.0, 1.0])
    p.add_argument("--v", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="marked.json")
    p.set_defaults(func=cmd_mark)

    def twin_flags(p):
        p.add_argument("--epsilon-m", type=float, required=True)
        p.add_argument("--psi1", type=float, default=0.2)
        p.add_argument("--psi2", type=float, default=0.4)
        p.add_argument("--loading", type=float, nargs=3,
                       default=[0.0, 0.0, 1.0])
        p.add_argument("--hall-petch", action="store_true")

    p = sub.add_parser("twin", help="per-cell twin decision and state")
    p.add_argument("--tess", required=True, help="marked tessellation")
    twin_flags(p)
    p.add_argument("--out", default="twin.csv")
    p.set_defaults(func=cmd_twin)

    p = sub.add_parser("lamellae", help="simulate lamellar systems")
    p.add_argument("--tess", required=True, help="marked tessellation")
    p.add_argument("--twin", required=True, help="twin-state CSV")
    p.add_argument("--method", choices=("growth", "anneal"),
                   default="growth")
    p.add_argument("--l-max", type=int, default=3)
    p.add_argument("--xi", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--zeta1", type=float, default=0.05)
    p.add_argument("--zeta2", type=float, default=0.5)
    p.add_argument("--theta", type=float, nargs="+", default=[1.0, 1.2, 1.2])
    p.add_argument("--poisson-lambda", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="cli")
    p.add_argument("--out", default="lamellae.json")
    p.add_argument("--csv", default=None, help="optional per-lamella CSV")
    p.set_defaults(func=cmd_lamellae)

    p = sub.add_parser("nest", help="assemble the nested tessellation")
    p.add_argument("--tess", required=True, help="marked tessellation")
    p.add_argument("--systems", required=True, help="lamellae document")
    twin_flags(p)
    p.add_argument("--clip", action="store_true",
                   help="clip subcells to the unit window")
    p.add_argument("--out", default="nested.json")
    p.set_defaults(func=cmd_nest)

    p = sub.add_parser("stats", help="descriptive statistics of a run")
    p.add_argument("--nested", required=True)
    p.add_argument("--l-max", type=int, default=3)
    p.add_argument("--out-dir", default="stats")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("energy-synth", help="synthesize element records")
    p.add_argument("--nested", required=True)
    p.add_argument("--density", type=float, default=20000.0)
    p.add_argument("--scales", type=float, nargs=2, default=[2.0, 1.0],
                   help="lamella and matrix energy scales")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="elements.csv")
    p.set_defaults(func=cmd_energy_synth)

    p = sub.add_parser("ingest-elements", help="estimate TSED from elements")
    p.add_argument("--elements", required=True)
    p.add_argument("--nested", required=True)
    p.add_argument("--epsilon-m", type=float, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--marking", choices=("im", "ma"), default="im")
    p.add_argument("--append", action="store_true")
    p.add_argument("--out", default="tsed.csv")
    p.set_defaults(func=cmd_ingest_elements)

    p = sub.add_parser("regress", help="fit the TSED model suite")
    p.add_argument("--input", required=True, help="twinlab-tsed/1 CSV")
    p.add_argument("--model", default="suite",
                   choices=("m1", "m1p", "m2", "m3", "cubic_pair", "suite"))
    p.add_argument("--out", default="model.csv")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("pipeline", help="run the full experiment grid")
    p.add_argument("--config", default=None, help="TOML configuration")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (tio.SchemaError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
