"""Descriptive statistics of simulated microstructures.

Histograms of per-cell quantities, lamella-count frequencies over inner
cells, normalized lamella geometry with 2D kernel density estimates, and
inverse-pole-figure datasets before/after twinning.  All outputs are
plain arrays/records ready for CSV export; no plotting here.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .lamellae import NestedTessellation
from .orientation import ipf_coordinates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Histogram:
    """Equal-width histogram; left-closed bins, last bin right-closed."""

    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def n(self):
        return int(self.counts.sum())


def histogram(values, bins, value_range=None):
    """Count values into equal-width bins (numpy semantics)."""
    if bins < 1:
        raise ValueError("need at least one bin")
    values = np.asarray(values, dtype=float)
    if value_range is None:
        value_range = (float(values.min()), float(values.max())) if len(values) else (0.0, 1.0)
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return Histogram(edges, counts)


def lamella_count_frequencies(systems, inner_ids, l_max):
    """Relative frequencies of lamella counts over inner cells.

    ``p_hat[k-1]`` is the fraction of inner cells with exactly k lamellae;
    untwinned inner cells contribute to none of them, so the frequencies
    sum to at most 1.
    """
    if len(inner_ids) == 0:
        raise ValueError("need at least one inner cell")
    counts = np.zeros(l_max)
    for cid in inner_ids:
        system = systems.get(cid)
        if system is not None and 1 <= system.count <= l_max:
            counts[system.count - 1] += 1
    return counts / len(inner_ids)


def normalized_geometry(systems):
    """Normalized lamella centers and semi-widths.

    Returns records (cell_id, lamella_index, d_norm, w_norm,
    two_lamellae) with d_norm = (d - alpha) / rho in (0, 1) and
    w_norm = w / rho in (0, zeta2); the flag marks cells with exactly two
    lamellae for the paired center/width analysis.
    """
    records = []
    for cid in sorted(systems):
        system = systems[cid]
        f = system.feret
        two = system.count == 2
        for k, lamella in enumerate(system.lamellae):
            records.append((cid, k,
                            (lamella.d - f.alpha) / f.rho,
                            lamella.w / f.rho,
                            two))
    return records


@dataclass(frozen=True)
class Kde2D:
    """Product-Gaussian kernel density estimate on a rectangular grid."""

    grid_x: np.ndarray
    grid_y: np.ndarray
    density: np.ndarray         # shape (len(grid_y), len(grid_x))
    bandwidths: tuple

    def integral(self):
        return float(np.trapezoid(np.trapezoid(self.density, self.grid_x, axis=1),
                                  self.grid_y))

    def argmax(self):
        iy, ix = np.unravel_index(int(np.argmax(self.density)),
                                  self.density.shape)
        return float(self.grid_x[ix]), float(self.grid_y[iy])


def silverman_bandwidth(values):
    """Rule-of-thumb bandwidth 1.06 * sigma * n^(-1/5)."""
    values = np.asarray(values, dtype=float)
    return 1.06 * float(values.std(ddof=1)) * len(values) ** (-0.2)


def kde2(points, grid_x=None, grid_y=None, gridsize=64, pad_bandwidths=3.0):
    """2D kernel density estimate with per-axis Silverman bandwidths.

    Degenerate axes (zero variance) fall back to a bandwidth floor of
    1e-3, with a warning.  Default grids cover the data range plus
    ``pad_bandwidths`` bandwidths on each side.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 2:
        raise ValueError("need at least two (x, y) points")
    x, y = points[:, 0], points[:, 1]
    hx, hy = silverman_bandwidth(x), silverman_bandwidth(y)
    if hx <= 0:
        log.warning("degenerate x data; applying bandwidth floor 1e-3")
        hx = 1e-3
    if hy <= 0:
        log.warning("degenerate y data; applying bandwidth floor 1e-3")
        hy = 1e-3
    if grid_x is None:
        grid_x = np.linspace(x.min() - pad_bandwidths * hx,
                             x.max() + pad_bandwidths * hx, gridsize)
    if grid_y is None:
        grid_y = np.linspace(y.min() - pad_bandwidths * hy,
                             y.max() + pad_bandwidths * hy, gridsize)
    gx = np.asarray(grid_x, dtype=float)
    gy = np.asarray(grid_y, dtype=float)
    kx = np.exp(-0.5 * ((gx[None, :] - x[:, None]) / hx) ** 2) / (hx * np.sqrt(2 * np.pi))
    ky = np.exp(-0.5 * ((gy[None, :] - y[:, None]) / hy) ** 2) / (hy * np.sqrt(2 * np.pi))
    density = ky.T @ kx / len(points)
    return Kde2D(gx, gy, density, (hx, hy))


def ipf_dataset(source, direction=(0.0, 0.0, 1.0)):
    """Inverse-pole-figure records (id, x, y, phase).

    ``source`` is either a mapping cell_id -> Orientation (phase tagged
    "mother", the before-twinning view) or a NestedTessellation (one
    record per subcell with its lamella/matrix phase, the after view).
    """
    records = []
    if isinstance(source, NestedTessellation):
        for s in source.subcells:
            x, y = ipf_coordinates(s.mark, direction)
            records.append((s.cell_id, float(x), float(y), s.phase))
    else:
        for cid in sorted(source):
            x, y = ipf_coordinates(source[cid], direction)
            records.append((cid, float(x), float(y), "mother"))
    return records
