"""Random Laguerre tessellations in a box with prescribed cell volumes.

Pipeline order: sample Poisson generator points, draw volume targets from a
Gaussian equivalent-diameter law, fit generator weights so realized cell
volumes match the targets (semi-discrete transport), build the cells, then
select cells by plus sampling.

- `poisson_generators(intensity, domain, rng)`
- `gaussian_volume_targets(n, mu, sigma, domain_volume, rng)`
- `build_laguerre(generators, domain)` - cells + face-sharing adjacency
- `fit_weights(points, targets, domain, tol)` - damped Newton on the
  transport dual (graph-Laplacian Hessian from shared face areas)
- `plus_sample(tess, window)` / `inner_cells(tess)`

Cell i is the set of points whose power distance ||x - x_i||^2 - w_i is
minimal; cells are convex polytopes obtained by clipping the domain box
with one radical plane per competing generator.  Generators with dominated
weights legitimately produce empty cells.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .polytope import (FACE_AREA_MIN, VERTEX_MERGE_REL, Box, ConvexPolytope,
                       _Soup, _clip_by_planes, _soup_to_polytope)

log = logging.getLogger(__name__)


class DuplicateGenerators(ValueError):
    """Two generator points coincide."""


class NonConvergence(RuntimeError):
    """Weight fitting did not reach the volume tolerance in the budget."""

    def __init__(self, worst_error, iterations):
        super().__init__(
            f"weight fit stopped after {iterations} iterations, "
            f"worst relative volume error {worst_error:.3e}")
        self.worst_error = worst_error
        self.iterations = iterations


@dataclass(frozen=True)
class WeightedGenerator:
    """One Laguerre generator: point x and additive weight w."""

    x: tuple
    w: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", tuple(float(v) for v in x))
        object.__setattr__(self, "w", float(self.w))


@dataclass(frozen=True)
class VolumeTargets:
    """Positive per-cell volume targets summing to the domain volume."""

    values: np.ndarray
    domain_volume: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values <= 0):
            raise ValueError("volume targets must be positive")
        if abs(values.sum() - self.domain_volume) > 1e-9 * self.domain_volume:
            raise ValueError("volume targets must sum to the domain volume")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


class LaguerreTessellation:
    """Laguerre diagram of weighted generators clipped to a box domain.

    ``cells[i]`` is the (possibly empty) polytope of generator i;
    ``adjacency[i]`` lists the generators sharing a face with cell i
    (area > FACE_AREA_MIN, symmetric).
    """

    def __init__(self, domain, points, weights, cells, adjacency):
        self.domain = domain
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.cells = list(cells)
        self.adjacency = [sorted(set(a)) for a in adjacency]

    @property
    def generators(self):
        return [WeightedGenerator(tuple(x), w)
                for x, w in zip(self.points, self.weights)]

    def nonempty_indices(self):
        return [i for i, c in enumerate(self.cells) if not c.is_empty]

    def cell_volumes(self):
        return np.array([c.volume for c in self.cells])

    def validate(self, rel_tol=1e-6):
        """Check the partition and adjacency invariants; raises on failure."""
        total = sum(c.volume for c in self.cells)
        if abs(total - self.domain.volume) > rel_tol * self.domain.volume:
            raise AssertionError(
                f"cell volumes sum to {total}, domain is {self.domain.volume}")
        for i, nbs in enumerate(self.adjacency):
            for j in nbs:
                if i not in self.adjacency[j]:
                    raise AssertionError(f"adjacency not symmetric: {i} ~ {j}")
        return True

    def __repr__(self):
        ne = len(self.nonempty_indices())
        return (f"LaguerreTessellation({len(self.cells)} generators, "
                f"{ne} nonempty cells)")


def poisson_generators(intensity, domain, rng):
    """Homogeneous Poisson points in a box.

    ``intensity`` is the mean number of points per unit volume (the unit
    observation cube), so the expected count is ``intensity * |domain|``.
    """
    if intensity <= 0:
        raise ValueError("intensity must be positive")
    n = rng.poisson(intensity * domain.volume)
    return domain.sample(n, rng)


def gaussian_volume_targets(n, mu, sigma, domain_volume, rng):
    """Volume targets from Gaussian equivalent diameters.

    Diameters are drawn from N(mu, sigma^2) truncated to (0, inf) by
    resampling, converted to sphere volumes pi d^3 / 6, and normalized so
    the targets fill the domain exactly.
    """
    if n < 2:
        raise ValueError("need at least two cells")
    if mu <= 0 or sigma <= 0:
        raise ValueError("mu and sigma must be positive")
    d = rng.normal(mu, sigma, size=n)
    bad = d <= 0
    while np.any(bad):
        d[bad] = rng.normal(mu, sigma, size=int(bad.sum()))
        bad = d <= 0
    raw = np.pi * d ** 3 / 6.0
    values = domain_volume * raw / raw.sum()
    return VolumeTargets(values, domain_volume)


def _check_distinct(points):
    if len(points) > 1:
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=2)
        if dist[:, 1].min() < 1e-12:
            raise DuplicateGenerators("two generators coincide within 1e-12")


def _radical_plane(xi, wi, xj, wj):
    """Halfspace of points power-closer to (xi, wi) than to (xj, wj)."""
    diff = xj - xi
    d = np.linalg.norm(diff)
    normal = diff / d
    offset = (xj @ xj - xi @ xi + wi - wj) / (2.0 * d)
    return normal, offset


def _clip_cell(i, points, weights, domain, order_tree):
    """Clip the domain box to cell i; returns the face soup or None.

    Competing generators are processed by increasing distance; once the
    closest possible radical plane lies beyond every current vertex the
    remaining generators cannot cut and the loop stops early.
    """
    xi = points[i]
    wi = weights[i]
    wmax = weights.max()
    dists, idx = order_tree.query(xi, k=len(points))
    soup = _Soup.from_box(domain)
    tol = VERTEX_MERGE_REL * domain.diagonal
    radius = float(np.linalg.norm(soup.verts - xi, axis=1).max())
    for d, j in zip(dists[1:], idx[1:]):
        # least possible plane distance for any remaining generator
        bound = 0.5 * d + (wi - wmax) / (2.0 * d)
        if bound > radius and d * d > wi - wmax:
            break
        normal, offset = _radical_plane(xi, wi, points[j], weights[j])
        clipped = soup.clip(normal, offset, int(j), tol)
        if clipped is None:
            return None
        if clipped is not soup:
            soup = clipped
            radius = float(np.linalg.norm(soup.verts - xi, axis=1).max())
    return soup


def _cell_stats(soup, points, i):
    """(volume, {neighbor: laplacian weight}) for one clipped cell soup."""
    vol = soup.volume()
    areas = soup.face_areas()
    couplings = {}
    for a, t in zip(areas, soup.tags):
        if t >= 0 and a > FACE_AREA_MIN:
            d = np.linalg.norm(points[t] - points[i])
            couplings[int(t)] = couplings.get(int(t), 0.0) + a / (2.0 * d)
    return vol, couplings


def _all_volumes(points, weights, domain, with_couplings=False):
    tree = cKDTree(points)
    n = len(points)
    vols = np.zeros(n)
    couplings = [dict() for _ in range(n)] if with_couplings else None
    for i in range(n):
        soup = _clip_cell(i, points, weights, domain, tree)
        if soup is None:
            continue
        if with_couplings:
            vols[i], couplings[i] = _cell_stats(soup, points, i)
        else:
            vols[i] = soup.volume()
    return (vols, couplings) if with_couplings else vols


def build_laguerre(generators, domain):
    """Construct the Laguerre tessellation of weighted generators in a box.

    Parameters
    ----------
    generators : sequence of WeightedGenerator, or (points, weights) pair
    domain : Box

    Returns
    -------
    LaguerreTessellation
        With per-generator cells (empty ones included) and symmetric
        shared-face adjacency.
    """
    if (isinstance(generators, tuple) and len(generators) == 2
            and not isinstance(generators[0], WeightedGenerator)):
        points = np.asarray(generators[0], dtype=float)
        weights = np.asarray(generators[1], dtype=float)
    else:
        points = np.array([g.x for g in generators], dtype=float)
        weights = np.array([g.w for g in generators], dtype=float)
    if len(points) < 2:
        raise ValueError("need at least two generators")
    _check_distinct(points)

    tree = cKDTree(points)
    cells = []
    adjacency = [set() for _ in range(len(points))]
    for i in range(len(points)):
        soup = _clip_cell(i, points, weights, domain, tree)
        if soup is None:
            cells.append(ConvexPolytope.empty())
            continue
        poly = _soup_to_polytope(soup, (), VERTEX_MERGE_REL * domain.diagonal)
        cells.append(poly)
        areas = {}
        for f_idx, t in enumerate(poly.face_tags):
            if t >= 0:
                pg = poly.vertices[list(poly.faces[f_idx])]
                v0 = pg[0]
                cr = np.cross(pg[1:-1] - v0, pg[2:] - v0).sum(axis=0)
                areas[t] = areas.get(t, 0.0) + 0.5 * float(np.linalg.norm(cr))
        for t, a in areas.items():
            if a > FACE_AREA_MIN:
                adjacency[i].add(t)
    # a shared face seen from either side makes the pair neighbors
    for i in range(len(points)):
        for j in adjacency[i]:
            adjacency[j].add(i)
    return LaguerreTessellation(domain, points, weights, cells,
                                [sorted(a) for a in adjacency])


def fit_weights(points, targets, domain, tol=0.01, max_iter=500,
                method="newton"):
    """Fit Laguerre weights so cell volumes match prescribed targets.

    Damped Newton iteration on the semi-discrete transport dual: the
    Jacobian of volumes with respect to weights is a graph Laplacian with
    entries (shared face area) / (2 generator distance).  Steps are halved
    until no cell drops below a safe floor volume and the worst relative
    error decreases; generators whose cells empty get a weight bump before
    the next iteration.  ``method="fixed"`` selects a slower diagonal
    fixed-point update instead.

    Parameters
    ----------
    points : (n, 3) array
    targets : VolumeTargets
    domain : Box
    tol : float
        Maximum allowed relative volume error, in (0, 0.1].

    Returns
    -------
    (n,) array of weights, normalized so the smallest is 0.

    Raises
    ------
    NonConvergence
        If the error budget is not met within ``max_iter`` iterations.
    """
    if not 0 < tol <= 0.1:
        raise ValueError("tol must be in (0, 0.1]")
    points = np.asarray(points, dtype=float)
    tv = targets.values
    n = len(points)
    if len(tv) != n:
        raise ValueError("one target per generator required")
    _check_distinct(points)

    w = np.zeros(n)
    vols, coup = _all_volumes(points, w, domain, with_couplings=True)

    for it in range(max_iter):
        err = (vols - tv) / tv
        worst = float(np.abs(err).max())
        if worst <= tol:
            return w - w.min()

        if np.any(vols == 0.0):
            # dominated generators: raise their weights and rebuild
            bump = (6.0 * tv / np.pi) ** (2.0 / 3.0) * 0.25
            w[vols == 0.0] += bump[vols == 0.0]
            vols, coup = _all_volumes(points, w, domain, with_couplings=True)
            continue

        if method == "newton":
            H = np.zeros((n, n))
            for i, ci in enumerate(coup):
                for j, lam in ci.items():
                    H[i, j] -= lam
                    H[i, i] += lam
            rhs = tv - vols
            # Laplacian: pin one weight to fix the additive constant
            step = np.zeros(n)
            step[1:] = np.linalg.solve(H[1:, 1:], rhs[1:])
        else:
            scale = (6.0 * tv / np.pi) ** (2.0 / 3.0)
            step = (tv - vols) / tv * scale

        floor = 0.5 * min(tv.min(), vols.min())
        tau = 1.0
        improved = False
        for _ in range(30):
            trial = w + tau * step
            tvols, tcoup = _all_volumes(points, trial, domain,
                                        with_couplings=True)
            if tvols.min() > floor:
                tworst = float(np.abs((tvols - tv) / tv).max())
                if tworst < worst:
                    w, vols, coup = trial, tvols, tcoup
                    improved = True
                    break
            tau *= 0.5
        if not improved:
            if method == "newton":
                # Newton direction failed; one diagonal fixed-point sweep
                scale = (6.0 * tv / np.pi) ** (2.0 / 3.0)
                step = (tv - vols) / tv * scale
                tau = 0.25
                trial = w + tau * step
                tvols, tcoup = _all_volumes(points, trial, domain,
                                            with_couplings=True)
                if tvols.min() > 0:
                    w, vols, coup = trial, tvols, tcoup
                    continue
            raise NonConvergence(worst, it + 1)

    raise NonConvergence(worst, max_iter)


def plus_sample(tess, window):
    """Indices of nonempty cells hitting an observation window.

    Cells that also touch the boundary of the simulation domain are
    logged as plus-sampling violations (they may be cut off).
    """
    lo = np.array(window.lo)
    hi = np.array(window.hi)
    dlo = np.array(tess.domain.lo)
    dhi = np.array(tess.domain.hi)
    if np.any(lo < dlo) or np.any(hi > dhi):
        raise ValueError("window must be contained in the domain")
    selected = []
    for i in tess.nonempty_indices():
        v = tess.cells[i].vertices
        if np.all(v.max(axis=0) >= lo) and np.all(v.min(axis=0) <= hi):
            # bounding boxes overlap; convexity makes the cheap test exact
            # only if a vertex is inside, otherwise clip to confirm
            if np.any(np.all((v >= lo) & (v <= hi), axis=1)):
                selected.append(i)
            else:
                clipped = _clip_by_planes(tess.cells[i], window.halfspaces())
                if not clipped.is_empty and clipped.volume > 0:
                    selected.append(i)
    violations = [i for i in selected
                  if _touches_boundary(tess.cells[i], tess.domain)]
    for i in violations:
        log.warning("plus-sampling violation: cell %d touches the domain "
                    "boundary", i)
    return selected


def _touches_boundary(cell, domain, tol=1e-9):
    v = cell.vertices
    lo = np.array(domain.lo)
    hi = np.array(domain.hi)
    return bool(np.any(v <= lo + tol) or np.any(v >= hi - tol))


def inner_cells(tess):
    """Indices of nonempty cells strictly inside the domain."""
    return [i for i in tess.nonempty_indices()
            if not _touches_boundary(tess.cells[i], tess.domain)]
