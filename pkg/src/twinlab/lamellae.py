"""Random lamellar systems inside twinned cells, and the nested tessellation.

A lamellar system of a cell is a set of parallel slabs orthogonal to the
cell's twin normal.  Centers are placed by random sequential adsorption on
the Feret interval, then a common growth factor is found so the slab
volumes sum to the prescribed lamella volume fraction of the cell
(lamellar growth).  A simulated-annealing variant perturbs centers and
semi-widths individually.  Both must satisfy the spacing conditions:

(i)   neighboring lamellae at least rho*gamma apart,
(ii)  end margins at least rho*xi,
(iii) semi-widths strictly inside (rho*zeta1, rho*zeta2),
(iv)  total lamella volume within tolerance of V_t |C|.

Emitted systems are re-checked by `audit_system`, an independent verifier
that recomputes every quantity from the cell geometry.  `build_nested`
assembles mother cells, lamella subcells (reoriented marks) and
interlamellar matrix subcells into a nested tessellation; `clip_to_window`
restricts it to the observation window.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .polytope import VolumeProfile, _clip_by_planes, clip_slab, feret_interval

log = logging.getLogger(__name__)

# condition audits allow this relative slack for float roundoff
AUDIT_SLACK = 1e-9


class Infeasible(RuntimeError):
    """Centers cannot be placed in the available interval."""


class Unresolvable(RuntimeError):
    """No lamellar system reaching the target volume was found."""


class VolumeMismatch(RuntimeError):
    """Subcell volumes do not add up to the mother cell volume."""


@dataclass(frozen=True)
class LamellaParams:
    """Parameters of the lamellar-system model (paper-scale defaults)."""

    l_max: int = 3
    xi: float = 0.05
    gamma: float = 0.05
    zeta1: float = 0.05
    zeta2: float = 0.5
    theta: tuple = (1.0, 1.2, 1.2)
    poisson_lambda: float = 1.0
    grid_points: int = 200
    max_retries: int = 50
    max_attempts: int = 1000
    volume_rel_tol: float = 1e-3

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if not 0 < self.xi < 1 or not 0 < self.gamma < 1:
            raise ValueError("xi and gamma must be in (0, 1)")
        if not 0 < self.zeta1 < self.zeta2 <= 0.5:
            raise ValueError("need 0 < zeta1 < zeta2 <= 0.5")
        if len(self.theta) < self.l_max:
            raise ValueError("need one growth rate per possible lamella")
        if any(not 1.0 <= t < 2.0 for t in self.theta):
            raise ValueError("growth rates must lie in [1, 2)")
        if self.poisson_lambda < 0:
            raise ValueError("poisson_lambda must be >= 0")


@dataclass(frozen=True)
class Lamella:
    """One slab: center d and semi-width w on the Feret axis, plus its cut."""

    d: float
    w: float
    polytope: object


@dataclass(frozen=True)
class LamellarSystem:
    """Ordered lamellae of one cell along its twin normal."""

    cell_id: int
    direction: np.ndarray
    feret: object
    lamellae: tuple
    achieved_fraction: float

    @property
    def count(self):
        return len(self.lamellae)


def sample_count(p, rng):
    """Number of lamellae: right-truncated Poisson plus one.

    M ~ Poisson(poisson_lambda) conditioned on M <= l_max - 1, m = M + 1.
    Sampled exactly from the renormalized probability table.
    """
    k = np.arange(p.l_max)
    if p.poisson_lambda == 0:
        return 1
    logpmf = k * np.log(p.poisson_lambda) - [float(np.sum(np.log(np.arange(1, kk + 1)))) for kk in k]
    pmf = np.exp(logpmf - logpmf.max())
    pmf /= pmf.sum()
    return int(rng.choice(p.l_max, p=pmf)) + 1


def rsa_centers(m, f, p, rng):
    """Random sequential adsorption of m lamella centers.

    Centers are uniform on (alpha + xi*rho + zeta1*rho,
    beta - xi*rho - zeta1*rho) with hard-core distance
    gamma*rho + 2*zeta1*rho, so conditions (i) and (ii) are satisfiable at
    the minimal semi-width.  Returns the centers sorted ascending.

    Raises
    ------
    Infeasible
        If m centers do not fit within ``max_attempts`` candidate draws.
    """
    rho = f.rho
    lo = f.alpha + p.xi * rho + p.zeta1 * rho
    hi = f.beta - p.xi * rho - p.zeta1 * rho
    if hi <= lo:
        raise Infeasible("center interval is empty")
    hard = p.gamma * rho + 2.0 * p.zeta1 * rho
    accepted = []
    for _ in range(p.max_attempts):
        if len(accepted) == m:
            break
        c = lo + (hi - lo) * rng.random()
        if all(abs(c - a) >= hard for a in accepted):
            accepted.append(c)
    if len(accepted) < m:
        raise Infeasible(f"placed {len(accepted)}/{m} centers "
                         f"in {p.max_attempts} trials")
    return np.sort(np.asarray(accepted))


def delta_w(centers, theta, f, p):
    """Largest base semi-width keeping margins and gaps valid under growth.

    For widths theta_j * w, any w <= delta_w satisfies the end-margin and
    gap conditions (i)-(ii).
    """
    centers = np.asarray(centers, dtype=float)
    theta = np.asarray(theta, dtype=float)
    m = len(centers)
    rho = f.rho
    terms = [
        (centers[0] - f.alpha - p.xi * rho) / theta[0],
        (f.beta - p.xi * rho - centers[-1]) / theta[m - 1],
    ]
    if m > 1:
        gaps = (centers[1:] - centers[:-1] - p.gamma * rho)
        terms.append(float(np.min(gaps / (theta[:-1] + theta[1:]))))
    return float(min(terms))


def upsilon(profile, centers, theta, w):
    """Total slab volume at base semi-width w: sum of V(d+tw) - V(d-tw)."""
    total = 0.0
    for d, t in zip(centers, theta):
        total += profile.evaluate(d + t * w) - profile.evaluate(d - t * w)
    return total


def _search_width(profile, centers, theta, lo, hi, target, rel_tol, grid_points):
    """Grid bracket plus bisection on the increasing function upsilon."""
    ws = np.linspace(lo, hi, grid_points)
    vals = np.array([upsilon(profile, centers, theta, w) for w in ws])
    if target < vals[0] or target > vals[-1]:
        return None
    k = int(np.searchsorted(vals, target))
    if k == 0:
        return float(ws[0])
    a, b = float(ws[k - 1]), float(ws[k])
    fa = vals[k - 1]
    for _ in range(80):
        mid = 0.5 * (a + b)
        fm = upsilon(profile, centers, theta, mid)
        if abs(fm - target) <= rel_tol * target:
            return mid
        if fm < target:
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def _build_system(cell, f, cell_id, direction, centers, widths):
    lams = []
    total = 0.0
    for d, w in zip(centers, widths):
        poly = clip_slab(cell, f, d - w, d + w)
        lams.append(Lamella(float(d), float(w), poly))
        total += poly.volume
    return LamellarSystem(cell_id, np.asarray(direction, dtype=float), f,
                          tuple(lams), total / cell.volume)


def grow_lamellae(cell, n_vec, v_t, p, rng, cell_id=-1, profile=None):
    """Simulate a lamellar system by lamellar growth.

    Resamples the lamella count and RSA centers until a base width w0
    exists with total slab volume V_t |C| (within ``volume_rel_tol``
    relative); widths are theta_j * w0.  The admissible width interval is
    capped at zeta2*rho / max(theta) so every emitted semi-width satisfies
    condition (iii).

    ``profile`` may pass a precomputed VolumeProfile of (cell, n_vec) when
    simulating the same cell at several volume fractions.

    Raises
    ------
    Unresolvable
        After ``max_retries`` failed resamplings.
    """
    if cell.is_empty or not 0 < v_t < 1:
        raise ValueError("need a nonempty cell and v_t in (0, 1)")
    if profile is None:
        profile = VolumeProfile(cell, feret_interval(cell, n_vec))
    f = profile.feret
    target = v_t * cell.volume
    rho = f.rho
    eps = 1e-9 * rho
    for _ in range(p.max_retries):
        m = sample_count(p, rng)
        try:
            centers = rsa_centers(m, f, p, rng)
        except Infeasible:
            continue
        theta = np.asarray(p.theta[:m], dtype=float)
        hi = min(delta_w(centers, theta, f, p),
                 p.zeta2 * rho / float(theta.max()))
        lo = p.zeta1 * rho
        if hi - eps <= lo + eps:
            continue
        w0 = _search_width(profile, centers, theta, lo + eps, hi - eps,
                           target, p.volume_rel_tol, p.grid_points)
        if w0 is None:
            continue
        system = _build_system(cell, f, cell_id, n_vec, centers, theta * w0)
        audit_system(system, cell, p, v_t)
        return system
    raise Unresolvable(
        f"cell {cell_id}: no lamellar system for v_t={v_t:.4f} "
        f"after {p.max_retries} retries")


def anneal_lamellae(cell, n_vec, v_t, p, rng, cell_id=-1, iterations=10_000,
                    cooling=0.995, profile=None):
    """Simulate a lamellar system by simulated annealing.

    States are center/semi-width pairs satisfying conditions (i)-(iii);
    moves perturb one coordinate of one lamella and are rejected outside
    the state space.  The energy is |total slab volume - V_t |C|| with
    initial temperature V_t |C| and geometric cooling.

    Raises
    ------
    Unresolvable
        If the final energy exceeds the volume tolerance.
    """
    if cell.is_empty or not 0 < v_t < 1:
        raise ValueError("need a nonempty cell and v_t in (0, 1)")
    if profile is None:
        profile = VolumeProfile(cell, feret_interval(cell, n_vec))
    f = profile.feret
    target = v_t * cell.volume
    rho = f.rho
    eps = 1e-9 * rho

    state = None
    for _ in range(p.max_retries):
        m = sample_count(p, rng)
        try:
            centers = rsa_centers(m, f, p, rng)
        except Infeasible:
            continue
        theta = np.asarray(p.theta[:m], dtype=float)
        hi = min(delta_w(centers, theta, f, p),
                 p.zeta2 * rho / float(theta.max()))
        lo = p.zeta1 * rho
        if hi - eps <= lo + eps:
            continue
        w = lo + eps + (hi - lo - 2 * eps) * rng.random()
        state = (centers.copy(), theta * w)
        break
    if state is None:
        raise Unresolvable(f"cell {cell_id}: no feasible initial state")

    def ok(centers, widths):
        if np.any(widths <= p.zeta1 * rho) or np.any(widths >= p.zeta2 * rho):
            return False
        if centers[0] - widths[0] - f.alpha < p.xi * rho:
            return False
        if f.beta - (centers[-1] + widths[-1]) < p.xi * rho:
            return False
        if len(centers) > 1:
            gaps = centers[1:] - widths[1:] - (centers[:-1] + widths[:-1])
            if np.any(gaps < p.gamma * rho):
                return False
        return True

    def energy(centers, widths):
        tot = 0.0
        for d, w in zip(centers, widths):
            tot += profile.evaluate(d + w) - profile.evaluate(d - w)
        return abs(tot - target)

    centers, widths = state
    h = energy(centers, widths)
    temp = target
    sigma = 0.02 * rho
    tol = p.volume_rel_tol * target
    for _ in range(iterations):
        if h <= tol:
            break
        j = int(rng.integers(len(centers)))
        move_width = rng.random() < 0.5
        cand_c = centers.copy()
        cand_w = widths.copy()
        if move_width:
            cand_w[j] += sigma * rng.normal()
        else:
            cand_c[j] += sigma * rng.normal()
            if not np.all(np.diff(cand_c) > 0):
                temp *= cooling
                continue
        if not ok(cand_c, cand_w):
            temp *= cooling
            continue
        h2 = energy(cand_c, cand_w)
        if h2 <= h or rng.random() < np.exp((h - h2) / max(temp, 1e-300)):
            centers, widths, h = cand_c, cand_w, h2
        temp *= cooling

    if h > tol:
        raise Unresolvable(
            f"cell {cell_id}: annealing stalled at energy {h:.3e} "
            f"(tolerance {tol:.3e})")
    system = _build_system(cell, f, cell_id, n_vec, centers, widths)
    audit_system(system, cell, p, v_t)
    return system


def audit_system(system, cell, p, v_t):
    """Independent re-check of conditions (i)-(iv) on an emitted system.

    Recomputes the Feret interval and the slab volumes from the cell
    geometry; raises AssertionError on any violation.  Conditions (i)-(iii)
    are checked with a 1e-9 relative slack for roundoff, (iv) against the
    configured volume tolerance.
    """
    f = feret_interval(cell, np.asarray(system.direction, dtype=float))
    rho = f.rho
    slack = AUDIT_SLACK * rho
    d = np.array([l.d for l in system.lamellae])
    w = np.array([l.w for l in system.lamellae])
    if not np.all(np.diff(d) > 0):
        raise AssertionError("lamella centers are not strictly increasing")
    if np.any(w <= p.zeta1 * rho - slack) or np.any(w >= p.zeta2 * rho + slack):
        raise AssertionError("condition (iii) violated: semi-width outside "
                             f"({p.zeta1 * rho}, {p.zeta2 * rho})")
    if d[0] - w[0] - f.alpha < p.xi * rho - slack:
        raise AssertionError("condition (ii) violated at the lower margin")
    if f.beta - (d[-1] + w[-1]) < p.xi * rho - slack:
        raise AssertionError("condition (ii) violated at the upper margin")
    if len(d) > 1:
        gaps = d[1:] - w[1:] - (d[:-1] + w[:-1])
        if np.any(gaps < p.gamma * rho - slack):
            raise AssertionError("condition (i) violated between lamellae")
    total = 0.0
    for dd, ww in zip(d, w):
        total += clip_slab(cell, f, dd - ww, dd + ww).volume
    target = v_t * cell.volume
    if abs(total - target) > p.volume_rel_tol * target + 1e-12:
        raise AssertionError(
            f"condition (iv) violated: volume {total:.6e} vs "
            f"target {target:.6e}")
    return True


def rebuild_polytopes(system, cell):
    """Recreate lamella slab polytopes of a deserialized system."""
    lams = []
    total = 0.0
    for lam in system.lamellae:
        poly = clip_slab(cell, system.feret, lam.d - lam.w, lam.d + lam.w)
        lams.append(Lamella(lam.d, lam.w, poly))
        total += poly.volume
    return LamellarSystem(system.cell_id, system.direction, system.feret,
                          tuple(lams), total / cell.volume)


@dataclass(frozen=True)
class Subcell:
    """One piece of a nested tessellation with its orientation mark."""

    cell_id: int
    phase: str              # "lamella" or "matrix"
    polytope: object
    mark: object
    lamella_index: int = -1


class NestedTessellation:
    """Mother cells subdivided into lamella and matrix subcells."""

    def __init__(self, mother, systems, subcells):
        self.mother = mother
        self.systems = dict(systems)
        self.subcells = list(subcells)

    def phase_volume(self, phase):
        return sum(s.polytope.volume for s in self.subcells
                   if s.phase == phase)

    def validate(self, rel_tol=1e-6):
        by_cell = {}
        for s in self.subcells:
            by_cell[s.cell_id] = by_cell.get(s.cell_id, 0.0) + s.polytope.volume
        for cid, vol in by_cell.items():
            ref = self.mother.cells[cid].volume
            if abs(vol - ref) > rel_tol * ref:
                raise VolumeMismatch(
                    f"cell {cid}: subcell volumes {vol} vs cell {ref}")
        return True

    def __repr__(self):
        nl = sum(1 for s in self.subcells if s.phase == "lamella")
        return (f"NestedTessellation({len(self.subcells)} subcells, "
                f"{nl} lamellae)")


def build_nested(tess, marks, twin_states, systems, cell_ids=None):
    """Assemble the nested tessellation from per-cell lamellar systems.

    Twinned cells contribute their lamella slabs (marked with the
    reoriented lattice) and interlamellar gaps (marked with the original
    orientation); untwinned cells become single matrix subcells.

    Parameters
    ----------
    tess : LaguerreTessellation
    marks : mapping cell_id -> Orientation
    twin_states : mapping cell_id -> TwinState
    systems : mapping cell_id -> LamellarSystem (twinned cells only)
    cell_ids : iterable of int, optional
        Cells to include; all nonempty cells by default.

    Raises
    ------
    VolumeMismatch
        If a cell's subcells do not fill it within 1e-6 relative.
    """
    if cell_ids is None:
        cell_ids = tess.nonempty_indices()
    subcells = []
    for cid in cell_ids:
        cell = tess.cells[cid]
        mark = marks[cid]
        system = systems.get(cid)
        if system is None:
            subcells.append(Subcell(cid, "matrix", cell, mark))
            continue
        twin_mark = twin_states[cid].reorientation
        f = system.feret
        eps = 1e-12 * max(f.rho, 1.0)
        cursor = f.alpha
        acc = 0.0
        for k, lam in enumerate(system.lamellae):
            lo, hi = lam.d - lam.w, lam.d + lam.w
            if lo - cursor > eps:
                gap = clip_slab(cell, f, cursor, lo)
                if not gap.is_empty and gap.volume > 0:
                    subcells.append(Subcell(cid, "matrix", gap, mark))
                    acc += gap.volume
            subcells.append(Subcell(cid, "lamella", lam.polytope, twin_mark,
                                    lamella_index=k))
            acc += lam.polytope.volume
            cursor = hi
        if f.beta - cursor > eps:
            gap = clip_slab(cell, f, cursor, f.beta)
            if not gap.is_empty and gap.volume > 0:
                subcells.append(Subcell(cid, "matrix", gap, mark))
                acc += gap.volume
        if abs(acc - cell.volume) > 1e-6 * cell.volume:
            raise VolumeMismatch(
                f"cell {cid}: subcells fill {acc} of {cell.volume}")
    nested = NestedTessellation(tess, systems, subcells)
    return nested


def clip_to_window(nested, window):
    """Restrict a nested tessellation to an observation window."""
    walls = window.halfspaces()
    out = []
    for s in nested.subcells:
        clipped = _clip_by_planes(s.polytope, walls)
        if not clipped.is_empty and clipped.volume > 0:
            out.append(Subcell(s.cell_id, s.phase, clipped, s.mark,
                               s.lamella_index))
    total = sum(s.polytope.volume for s in out)
    if abs(total - window.volume) > 1e-6 * window.volume:
        log.warning("clipped subcells fill %.8f of window volume %.8f",
                    total, window.volume)
    return NestedTessellation(nested.mother, nested.systems, out)
