"""End-to-end experiment orchestration.

One run generates a Laguerre tessellation with prescribed cell volumes,
marks it with crystallographic orientations per marking scheme (moving
average, or independent at each texture level), applies the twin decision
rule, simulates lamellar systems per macroscopic-strain level, nests and
clips the tessellation, writes statistics, and optionally synthesizes
element records and strain-energy summaries for the regression stage.

Every random draw comes from a substream keyed by (seed, stage, variant,
cell), so outputs are a pure function of (config, seed) regardless of
evaluation order; rerunning a configuration reproduces every export byte
for byte.  Wall-clock timings go to a separate ``timings.json`` so the
deterministic exports stay comparable.
"""

import dataclasses
import json
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as tio
from .energy import classify_records, phase_tsed, synthesize_elements
from .lamellae import (LamellaParams, Unresolvable, anneal_lamellae,
                       build_nested, clip_to_window, grow_lamellae)
from .orientation import (OdfParams, moving_average_marks, sample_odf_many,
                          sample_uniform_many)
from .polytope import Box, VolumeProfile, feret_interval
from .regression import TsedRecord, paper_model_suite
from .stats import (histogram, ipf_dataset, kde2, lamella_count_frequencies,
                    normalized_geometry)
from .tessellation import (build_laguerre, fit_weights,
                           gaussian_volume_targets, inner_cells,
                           plus_sample, poisson_generators)
from .twinning import (TwinDecisionParams, TwinState, critical_propensity,
                       propensity, reorientation, system_114, twin_decision,
                       twin_normal, twin_strain, twin_volume_fraction,
                       FractionOverflow)

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("tess", "mark", "twin", "lamellae", "nest", "stats",
                   "energy")


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage and offending cell."""

    def __init__(self, stage, cell_id, cause):
        super().__init__(f"stage '{stage}' failed"
                         + (f" at cell {cell_id}" if cell_id is not None else "")
                         + f": {cause}")
        self.stage = stage
        self.cell_id = cell_id


@dataclass(frozen=True)
class RunConfig:
    """Complete configuration of one experiment run."""

    seed: int = 0
    lambda0: float = 100.0
    margin: float = 0.5
    mu: float = 5.1
    sigma: float = 1.3
    kappas: tuple = (0.0, 10.0, 20.0, 30.0)
    include_ma: bool = True
    epsilon_m: tuple = (0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2)
    psi1: float = 0.2
    psi2: float = 0.4
    loading: tuple = (0.0, 0.0, 1.0)
    odf_u: tuple = (0.0, 0.0, 1.0)
    odf_v: tuple = (1.0, 1.0, 1.0)
    shear_override: float = None
    hall_petch_orientation: bool = False
    lamella: LamellaParams = field(default_factory=LamellaParams)
    lamella_method: str = "growth"
    fit_tol: float = 0.01
    energy_synth: bool = False
    energy_density: float = 20_000.0
    energy_scales: tuple = (2.0, 1.0)
    energy_noise: float = 0.0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.lambda0 <= 0 or self.margin <= 0:
            raise ValueError("lambda0 and margin must be positive")
        if not 0 < self.psi1 < self.psi2 < 1:
            raise ValueError("need 0 < psi1 < psi2 < 1")
        if any(not 0 < e < 1 for e in self.epsilon_m):
            raise ValueError("epsilon_m values must be in (0, 1)")
        if any(k < 0 for k in self.kappas):
            raise ValueError("kappa values must be >= 0")
        if self.lamella_method not in ("growth", "anneal"):
            raise ValueError("lamella_method must be 'growth' or 'anneal'")
        if not 0 < self.fit_tol <= 0.1:
            raise ValueError("fit_tol must be in (0, 0.1]")

    @classmethod
    def paper_profile(cls, **overrides):
        """The reference parameter grid (4 texture levels + moving average,
        7 strain levels, paper lamella parameters)."""
        return cls(**overrides)

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(Path(path).read_text())
        lam = raw.pop("lamella", None)
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in raw:
                v = raw.pop(f.name)
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        if raw:
            raise ValueError(f"unknown config keys: {sorted(raw)}")
        if lam is not None:
            lam = {k: (tuple(v) if isinstance(v, list) else v)
                   for k, v in lam.items()}
            kwargs["lamella"] = LamellaParams(**lam)
        return cls(**kwargs)

    def domain(self):
        return Box((-self.margin,) * 3, (1.0 + self.margin,) * 3)

    def window(self):
        return Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    def marking_schemes(self):
        """(marking, kappa) pairs; MA exists only for kappa = 0."""
        schemes = [("ma", 0.0)] if self.include_ma else []
        schemes += [("im", float(k)) for k in self.kappas]
        return schemes

    def variants(self):
        return [(mk, kap, float(e))
                for mk, kap in self.marking_schemes()
                for e in self.epsilon_m]

    def summary_dict(self):
        d = dataclasses.asdict(self)
        d["lamella"] = dataclasses.asdict(self.lamella)
        return d


def variant_label(marking, kappa, eps=None):
    base = f"{marking}_k{kappa:g}"
    return base if eps is None else f"{base}_e{eps:.3f}"


def stage_rng(seed, stage, *keys):
    """Independent substream keyed by stage name and integer/string keys."""
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(stage.encode())]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode()))
        else:
            entropy.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _clamped_critical(volume, params):
    v = min(max(volume, params.v_min), params.v_max)
    return critical_propensity(v, params)


def generate_tessellation(config):
    """Stage 1: generators, targets, weight fit, cells, cell selections."""
    domain = config.domain()
    rng = stage_rng(config.seed, "tess")
    points = poisson_generators(config.lambda0, domain, rng)
    if len(points) < 2:
        raise PipelineError("tess", None, "fewer than two generators drawn")
    targets = gaussian_volume_targets(len(points), config.mu, config.sigma,
                                      domain.volume, rng)
    weights = fit_weights(points, targets, domain, tol=config.fit_tol)
    tess = build_laguerre((points, weights), domain)
    q_hit = plus_sample(tess, config.window())
    inner = inner_cells(tess)
    return tess, q_hit, inner


def sample_marks(config, tess, marking, kappa):
    """Stage 2: orientation marks for every nonempty cell."""
    ids = tess.nonempty_indices()
    label = variant_label(marking, kappa)
    marks = {}
    if marking == "im" and kappa > 0:
        params = OdfParams(kappa, config.odf_u, config.odf_v)
        for cid in ids:
            rng = stage_rng(config.seed, "mark", label, cid)
            marks[cid] = sample_odf_many(params, 1, rng)[0]
    else:
        for cid in ids:
            rng = stage_rng(config.seed, "mark", label, cid)
            marks[cid] = sample_uniform_many(1, rng)[0]
    if marking == "ma":
        pos = {cid: k for k, cid in enumerate(ids)}
        adj = [[pos[j] for j in tess.adjacency[cid]] for cid in ids]
        averaged = moving_average_marks(adj, [marks[cid] for cid in ids])
        marks = {cid: averaged[pos[cid]] for cid in ids}
    return marks


def evaluate_twinning(config, tess, marks, q_hit, cell_ids):
    """Stage 3, strain-independent part: propensity, decision, normal.

    The critical-propensity calibration volume range comes from the cells
    hitting the observation window; volumes of other simulated cells are
    clamped into that range.
    """
    vols = {cid: tess.cells[cid].volume for cid in cell_ids}
    qv = [tess.cells[cid].volume for cid in q_hit]
    params = TwinDecisionParams(config.psi1, config.psi2, min(qv), max(qv),
                                np.asarray(config.loading, dtype=float),
                                config.hall_petch_orientation)
    system = system_114(config.shear_override)
    base = {}
    for cid in cell_ids:
        g = marks[cid]
        psi, r_idx = propensity(g, system, params.d_l)
        psi_c = _clamped_critical(vols[cid], params)
        n_vec = twin_normal(g, system, r_idx)
        _, e_scalar = twin_strain(g, system, r_idx, params.d_l)
        reor = reorientation(system, r_idx, g)
        base[cid] = (psi, r_idx, n_vec, e_scalar, reor,
                     twin_decision(psi, psi_c), psi_c)
    return base, params, system


def twin_states_for_strain(base, epsilon_m):
    """Stage 3, per-strain part: lamella volume fractions."""
    states = {}
    for cid, (psi, r_idx, n_vec, e_scalar, reor, decided, psi_c) in base.items():
        v_t = 0.0
        resolvable = True
        twinned = decided
        if decided:
            try:
                v_t = twin_volume_fraction(epsilon_m, e_scalar)
            except FractionOverflow:
                twinned = False
                resolvable = False
        states[cid] = TwinState(psi, r_idx, n_vec, e_scalar, v_t, reor,
                                twinned, psi_c, resolvable)
    return states


def simulate_lamellae(config, tess, states, cell_ids, variant,
                      profile_cache=None):
    """Stage 4: per-cell lamellar systems for the twinned cells.

    ``profile_cache`` (dict) reuses per-cell volume profiles across the
    strain levels of one marking scheme; the twin normal is mark-determined
    and therefore identical across those levels.
    """
    grow = grow_lamellae if config.lamella_method == "growth" else anneal_lamellae
    systems = {}
    failed = []
    for cid in cell_ids:
        st = states[cid]
        if not st.decision:
            continue
        profile = None
        if profile_cache is not None:
            profile = profile_cache.get(cid)
            if profile is None:
                profile = VolumeProfile(
                    tess.cells[cid],
                    feret_interval(tess.cells[cid], st.n_vec))
                profile_cache[cid] = profile
        rng = stage_rng(config.seed, "lamellae", variant, cid)
        try:
            systems[cid] = grow(tess.cells[cid], st.n_vec, st.v_t,
                                config.lamella, rng, cell_id=cid,
                                profile=profile)
        except Unresolvable as exc:
            log.warning("%s", exc)
            failed.append(cid)
    return systems, failed


def _variant_stats(config, outdir, tess, marks, states, systems, q_hit,
                   inner, clipped):
    statsdir = outdir / "stats"
    statsdir.mkdir(parents=True, exist_ok=True)

    psis = [states[cid].propensity for cid in q_hit]
    tio.write_histogram_csv(statsdir / "propensity_hist.csv",
                            histogram(psis, 20, (0.0, 0.5)))
    vts = [states[cid].v_t for cid in q_hit if states[cid].decision]
    if vts:
        tio.write_histogram_csv(statsdir / "vt_hist.csv",
                                histogram(vts, 20, (0.0, 1.0)))
    freqs = lamella_count_frequencies(systems, inner, config.lamella.l_max)
    tio.write_rows_csv(statsdir / "counts.csv", ("k", "frequency"),
                       [(k + 1, float(f)) for k, f in enumerate(freqs)])
    geom = normalized_geometry(systems)
    tio.write_rows_csv(statsdir / "geometry.csv",
                       ("cell_id", "lamella_index", "d_normalized",
                        "w_normalized", "two_lamellae"),
                       [(c, k, d, w, int(t)) for c, k, d, w, t in geom])
    for idx in (0, 1):
        pts = np.array([(d, w) for c, k, d, w, two in geom
                        if two and k == idx])
        if len(pts) >= 2:
            tio.write_kde_csv(statsdir / f"kde_lamella{idx + 1}.csv",
                              kde2(pts))
    before = ipf_dataset({cid: marks[cid] for cid in q_hit},
                         np.asarray(config.loading, dtype=float))
    tio.write_ipf_csv(statsdir / "ipf_before.csv", before)
    after = ipf_dataset(clipped, np.asarray(config.loading, dtype=float))
    tio.write_ipf_csv(statsdir / "ipf_after.csv", after)
    return freqs


def run_pipeline(config, dry_run=False):
    """Run the whole experiment grid; returns the run summary dict."""
    out_root = Path(config.output_dir)
    plan = [variant_label(mk, kap, e) for mk, kap, e in config.variants()]
    if dry_run:
        return {"config": config.summary_dict(), "variants": plan,
                "dry_run": True}

    timings = {}
    t0 = time.perf_counter()
    out_root.mkdir(parents=True, exist_ok=True)
    window = config.window()

    try:
        tess, q_hit, inner = generate_tessellation(config)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("tess", None, exc) from exc
    sim_cells = sorted(set(q_hit) | set(inner))
    tio.write_tessellation(out_root / "tess.json", tess)
    timings["tess"] = time.perf_counter() - t0

    summary = {
        "config": config.summary_dict(),
        "tessellation": {
            "generators": len(tess.points),
            "nonempty_cells": len(tess.nonempty_indices()),
            "inner_cells": len(inner),
            "window_hitting_cells": len(q_hit),
        },
        "variants": {},
    }
    tsed_records = []

    for marking, kappa in config.marking_schemes():
        mlabel = variant_label(marking, kappa)
        t1 = time.perf_counter()
        try:
            marks = sample_marks(config, tess, marking, kappa)
        except Exception as exc:
            raise PipelineError("mark", None, exc) from exc
        try:
            base, dparams, twin_sys = evaluate_twinning(
                config, tess, marks, q_hit, sim_cells)
        except Exception as exc:
            raise PipelineError("twin", None, exc) from exc
        timings[f"mark:{mlabel}"] = time.perf_counter() - t1
        twinned_frac = float(np.mean([base[cid][5] for cid in q_hit]))
        profile_cache = {}

        for eps in config.epsilon_m:
            vlabel = variant_label(marking, kappa, eps)
            outdir = out_root / vlabel
            outdir.mkdir(parents=True, exist_ok=True)
            t2 = time.perf_counter()

            states = twin_states_for_strain(base, eps)
            try:
                systems, failed = simulate_lamellae(
                    config, tess, states, sim_cells, vlabel,
                    profile_cache=profile_cache)
            except Exception as exc:
                raise PipelineError("lamellae", None, exc) from exc
            try:
                nested = build_nested(
                    tess, marks, states,
                    {cid: s for cid, s in systems.items() if cid in set(q_hit)},
                    cell_ids=q_hit)
                clipped = clip_to_window(nested, window)
            except Exception as exc:
                raise PipelineError("nest", None, exc) from exc

            vols = {cid: tess.cells[cid].volume for cid in sim_cells}
            tio.write_twin_csv(outdir / "twin.csv", states, vols)
            tio.write_lamellae_csv(outdir / "lamellae.csv", systems)
            tio.write_tessellation(outdir / "nested.json", tess,
                                   marks=marks, nested=clipped,
                                   meta={"variant": vlabel})
            try:
                freqs = _variant_stats(config, outdir, tess, marks, states,
                                       systems, q_hit, inner, clipped)
            except Exception as exc:
                raise PipelineError("stats", None, exc) from exc

            ventry = {
                "twinned_fraction_window_cells": twinned_frac,
                "unresolvable_cells": sorted(
                    [cid for cid in sim_cells
                     if not states[cid].resolvable] +
                    [cid for cid in failed]),
                "lamella_count_frequencies": [float(f) for f in freqs],
                "lamellar_systems": len(systems),
            }

            if config.energy_synth:
                try:
                    rng = stage_rng(config.seed, "energy", vlabel)
                    records, meta = synthesize_elements(
                        clipped, window, rng,
                        density=config.energy_density,
                        lamella_energy=config.energy_scales[0],
                        matrix_energy=config.energy_scales[1],
                        noise=config.energy_noise)
                    tio.write_elements_csv(outdir / "elements.csv", records,
                                           metadata=meta)
                    result = phase_tsed(records)
                    tsed_records.append(TsedRecord(
                        float(eps), float(kappa), marking,
                        result.w_total,
                        result.w_lamella or 0.0,
                        result.w_matrix or 0.0))
                    ventry["tsed"] = {
                        "w_total": result.w_total,
                        "w_lamella": result.w_lamella,
                        "w_matrix": result.w_matrix,
                        "v_l": result.v_l,
                        "v_m": result.v_m,
                    }
                except Exception as exc:
                    raise PipelineError("energy", None, exc) from exc

            summary["variants"][vlabel] = ventry
            timings[vlabel] = time.perf_counter() - t2

    if tsed_records:
        tio.write_tsed_csv(out_root / "tsed.csv", tsed_records)
        try:
            suite = paper_model_suite(tsed_records)
        except ValueError as exc:
            log.warning("model suite skipped: %s", exc)
        else:
            for name, fit in suite.items():
                if fit is not None:
                    tio.write_model_table_csv(out_root / f"model_{name}.csv",
                                              fit)

    (out_root / "run_summary.json").write_text(tio.dumps(summary))
    timings["total"] = time.perf_counter() - t0
    (out_root / "timings.json").write_text(
        json.dumps(timings, sort_keys=True, indent=1))
    return summary
