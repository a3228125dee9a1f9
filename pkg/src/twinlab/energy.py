"""Total strain energy density from per-element stress/strain records.

The external FEM step supplies one record per mesh element (centroid,
volume, stress and total-strain tensors); this module estimates the total
strain energy density (TSED) and its split between the lamellar and matrix
phases, classifies elements geometrically against a nested tessellation,
and can synthesize element records so the full pipeline runs without any
FEM input.  Energies are in MPa under the convention that the observation
cube has edge 100 um (length unit 1e-4 m).
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class OutsideDomain(ValueError):
    """Element centroid is outside the observation window."""


class EmptyPhase(ValueError):
    """A phase average was requested but the phase has zero volume."""


@dataclass(frozen=True)
class ElementRecord:
    """One mesh element: geometry, tensors and phase label."""

    element_id: int
    centroid: np.ndarray
    volume: float
    stress: np.ndarray      # (3, 3) symmetric, MPa
    strain: np.ndarray      # (3, 3) symmetric, dimensionless
    phase: str              # "lamella" | "matrix" | "straddling"

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float)
        s = np.asarray(self.stress, dtype=float).reshape(3, 3)
        e = np.asarray(self.strain, dtype=float).reshape(3, 3)
        if self.volume <= 0:
            raise ValueError("element volume must be positive")
        if np.abs(s - s.T).max() > 1e-9 or np.abs(e - e.T).max() > 1e-9:
            raise ValueError("stress and strain must be symmetric")
        for name, arr in (("centroid", c), ("stress", s), ("strain", e)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def symmetric_tensor(d11, d22, d33, d12, d13, d23):
    """Assemble a symmetric 3x3 tensor from its six components."""
    return np.array([[d11, d12, d13],
                     [d12, d22, d23],
                     [d13, d23, d33]], dtype=float)


def element_energy(r):
    """Energy density of one element: half the full stress:strain sum."""
    return 0.5 * float(np.sum(r.stress * r.strain))


def tsed(records):
    """Total strain energy density: volume-weighted element sum."""
    if not records:
        raise ValueError("need at least one element record")
    return float(sum(element_energy(r) * r.volume for r in records))


@dataclass(frozen=True)
class TsedResult:
    """Total and per-phase strain energy densities with phase volumes."""

    w_total: float
    w_lamella: float        # None when the lamellar phase is empty
    w_matrix: float         # None when the matrix phase is empty
    v_l: float
    v_m: float
    straddling_count: int
    straddling_volume: float

    def lamella_energy(self):
        if self.w_lamella is None:
            raise EmptyPhase("no lamellar elements")
        return self.w_lamella

    def matrix_energy(self):
        if self.w_matrix is None:
            raise EmptyPhase("no matrix elements")
        return self.w_matrix


def phase_tsed(records):
    """Phase-decomposed TSED estimate.

    Straddling elements are excluded from both phase averages and
    reported; each phase average is normalized by the phase volume.
    """
    if not records:
        raise ValueError("need at least one element record")
    sums = {"lamella": 0.0, "matrix": 0.0}
    vols = {"lamella": 0.0, "matrix": 0.0}
    straddle_n = 0
    straddle_v = 0.0
    total = 0.0
    for r in records:
        contrib = element_energy(r) * r.volume
        total += contrib
        if r.phase == "straddling":
            straddle_n += 1
            straddle_v += r.volume
            continue
        sums[r.phase] += contrib
        vols[r.phase] += r.volume
    w_l = sums["lamella"] / vols["lamella"] if vols["lamella"] > 0 else None
    w_m = sums["matrix"] / vols["matrix"] if vols["matrix"] > 0 else None
    return TsedResult(total, w_l, w_m, vols["lamella"], vols["matrix"],
                      straddle_n, straddle_v)


class PhaseLocator:
    """Point-to-subcell classification against a nested tessellation.

    Uses the Laguerre property (power-distance argmin identifies the
    mother cell) and the slab intervals of the cell's lamellar system, so
    no polytope containment tests are needed.
    """

    def __init__(self, nested):
        self.nested = nested
        tess = nested.mother
        self.points = tess.points
        self.weights = tess.weights
        self.slabs = {}
        for cid, system in nested.systems.items():
            f = system.feret
            bounds = np.array([(l.d - l.w, l.d + l.w)
                               for l in system.lamellae])
            self.slabs[cid] = (f, bounds)

    def mother_cell(self, x):
        d2 = np.sum((self.points - x) ** 2, axis=1) - self.weights
        return int(np.argmin(d2))

    def classify(self, x, radius=0.0):
        """Phase at point x; ``radius`` > 0 marks near-boundary straddling.

        An element straddles when a sphere of the given radius crosses a
        lamella slab plane of its mother cell.
        """
        cid = self.mother_cell(x)
        entry = self.slabs.get(cid)
        if entry is None:
            return cid, "matrix"
        f, bounds = entry
        t = float((x - f.anchor) @ f.direction)
        if radius > 0.0:
            if np.min(np.abs(bounds - t)) <= radius:
                return cid, "straddling"
        inside = np.any((bounds[:, 0] <= t) & (t <= bounds[:, 1]))
        return cid, ("lamella" if inside else "matrix")


def classify_phase(r, nested, window=None, locator=None):
    """Phase of one element record against a nested tessellation.

    The element straddles when a sphere of radius
    2 * (3 volume / 4 pi)^(1/3) around its centroid crosses a lamella
    boundary of the containing mother cell.

    Raises
    ------
    OutsideDomain
        If a window is given and the centroid lies outside it (1e-9 tol).
    """
    if window is not None and not window.contains(r.centroid, tol=1e-9):
        raise OutsideDomain(f"element {r.element_id} centroid outside window")
    if locator is None:
        locator = PhaseLocator(nested)
    radius = 2.0 * (3.0 * r.volume / (4.0 * np.pi)) ** (1.0 / 3.0)
    _, phase = locator.classify(np.asarray(r.centroid, dtype=float), radius)
    return phase


def classify_records(records, nested, window=None):
    """Classify many records, reusing one locator; returns new records."""
    locator = PhaseLocator(nested)
    out = []
    for r in records:
        phase = classify_phase(r, nested, window=window, locator=locator)
        out.append(ElementRecord(r.element_id, r.centroid, r.volume,
                                 r.stress, r.strain, phase))
    return out


def synthesize_elements(nested, window, rng, density=50_000.0,
                        lamella_energy=2.0, matrix_energy=1.0, noise=0.0,
                        reference_stress=100.0):
    """Synthetic element records standing in for the FEM solve.

    Uniform points in the window are assigned equal volume shares and the
    phase of the subcell containing them; stress/strain tensors are
    isotropic with per-phase energy scales plus optional Gaussian noise.
    Output metadata marks the records as synthetic.

    Returns
    -------
    (records, metadata) : (list of ElementRecord, dict)
    """
    n = max(int(round(density * window.volume)), 1)
    pts = window.sample(n, rng)
    share = window.volume / n
    locator = PhaseLocator(nested)
    scales = {"lamella": lamella_energy, "matrix": matrix_energy}
    records = []
    for k in range(n):
        _, phase = locator.classify(pts[k])
        e_target = scales[phase]
        if noise > 0:
            e_target = max(e_target + noise * rng.normal(), 0.0)
        sigma = reference_stress
        eps = 2.0 * e_target / (3.0 * sigma)
        records.append(ElementRecord(
            k, pts[k], share,
            np.eye(3) * sigma, np.eye(3) * eps, phase))
    metadata = {
        "synthetic": True,
        "density": density,
        "lamella_energy": lamella_energy,
        "matrix_energy": matrix_energy,
        "noise": noise,
        "n_elements": n,
    }
    return records, metadata
