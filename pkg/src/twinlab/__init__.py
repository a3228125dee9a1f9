"""Marked nested Laguerre tessellations for deformation twinning.

Simulates the microstructure of cubic polycrystals under mechanical
loading: random Laguerre tessellations with prescribed cell volumes,
crystallographic orientation marks with controllable texture, per-cell
twin decisions from Schmid-factor propensities, random lamellar systems
nested inside twinned cells, and statistical/regression analysis of the
resulting geometry and strain-energy data.
"""

from .polytope import (Box, ConvexPolytope, FeretInterval, Halfspace,
                       VolumeProfile, clip_slab, feret_interval,
                       intersect_halfspaces, volume, volume_function)
from .orientation import (OdfParams, Orientation, SymmetryGroup, cubic_group,
                          disorientation, ipf_coordinates,
                          moving_average_marks, representative_quat,
                          sample_odf, sample_odf_many, sample_uniform,
                          sample_uniform_many, tilt)
from .tessellation import (LaguerreTessellation, VolumeTargets,
                           WeightedGenerator, build_laguerre, fit_weights,
                           gaussian_volume_targets, inner_cells, plus_sample,
                           poisson_generators)
from .twinning import (TwinDecisionParams, TwinState, TwinningSystem,
                       critical_propensity, evaluate_cell, propensity,
                       reorientation, schmid_factor, system_114,
                       twin_decision, twin_normal, twin_strain,
                       twin_volume_fraction)
from .lamellae import (Lamella, LamellaParams, LamellarSystem,
                       NestedTessellation, Subcell, anneal_lamellae,
                       audit_system, build_nested, clip_to_window, delta_w,
                       grow_lamellae, rsa_centers, sample_count, upsilon)
from .stats import (Histogram, Kde2D, histogram, ipf_dataset, kde2,
                    lamella_count_frequencies, normalized_geometry)
from .energy import (ElementRecord, TsedResult, classify_phase,
                     classify_records, element_energy, phase_tsed,
                     symmetric_tensor, synthesize_elements, tsed)
from .regression import (DesignSpec, FitResult, Term, TsedRecord, f_cdf,
                         f_test_joint, fit_cubic_pair, fit_design, ols_fit,
                         paper_model_suite, residual_diagnostics, t_cdf)
from .pipeline import RunConfig, run_pipeline, stage_rng

__version__ = "0.1.0"
