"""Deformation-twinning physics per cell.

For a crystal with orientation G under uniaxial loading along D_l, the
resolved shear on a twinning system (plane normal n1, direction a1) is the
Schmid factor <n1, G D_l><a1, G D_l>.  The propensity for twinning is its
maximum over the 24 cubic-symmetry images of the system; the maximizing
element fixes the active variant, the twin normal in the specimen frame,
the lattice reorientation of the lamellae, and the shear strain that a
fully twinned crystal would accumulate.  A volume-dependent critical
propensity decides whether a cell twins at all.

The {114} system of cubic austenite is provided as the default
(`system_114()`), with shear magnitude s = 2 tan(beta_tw) = 1/sqrt(2).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .orientation import Orientation, cubic_group

log = logging.getLogger(__name__)

DEFAULT_LOADING = np.array([0.0, 0.0, 1.0])


class FractionOverflow(ValueError):
    """Requested macroscopic strain is unreachable: V_t would be >= 1."""


class OutOfRange(ValueError):
    """Cell volume outside the [v_min, v_max] calibration range."""


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"{name} must be nonzero")
    return v / n


@dataclass(frozen=True)
class TwinningSystem:
    """Twinning elements K1/eta1 (active) and K2/eta2 (conjugate).

    ``n1`` and ``a1`` are unit vectors in the crystal frame with
    <n1, a1> = 0; ``shear_s`` is the twinning shear magnitude and
    ``beta_tw`` the associated shear angle, s = 2 tan(beta_tw).
    """

    n1: np.ndarray
    a1: np.ndarray
    n2: np.ndarray
    a2: np.ndarray
    shear_s: float
    beta_tw: float

    def __post_init__(self):
        for name in ("n1", "a1", "n2", "a2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit vector")
            v = v.copy()
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if abs(float(self.n1 @ self.a1)) > 1e-12:
            raise ValueError("shear direction a1 must lie in the plane K1")
        if self.shear_s <= 0:
            raise ValueError("twinning shear must be positive")


def system_114(shear_override=None):
    """The {114}<221> twinning system of cubic austenite.

    K1 = (-4 1 1), eta1 = [1 2 2], K2 = (0 1 1), eta2 = [1 0 0].  The shear
    angle beta_tw = arccos(|<a2, n1>|) = arccos(4/sqrt(18)), about 19.47
    degrees, and the shear magnitude is s = 2 tan(beta_tw) = 1/sqrt(2).
    The magnitude of <a2, n1> is used because the sign convention of eta2
    is immaterial; ``shear_override`` substitutes an explicit s.
    """
    n1 = np.array([-4.0, 1.0, 1.0]) / np.sqrt(18.0)
    a1 = np.array([1.0, 2.0, 2.0]) / 3.0
    n2 = np.array([0.0, 1.0, 1.0]) / np.sqrt(2.0)
    a2 = np.array([1.0, 0.0, 0.0])
    beta = float(np.arccos(abs(a2 @ n1)))
    s = 2.0 * np.tan(beta) if shear_override is None else float(shear_override)
    return TwinningSystem(n1, a1, n2, a2, s, beta)


@dataclass(frozen=True)
class TwinDecisionParams:
    """Parameters of the volume-dependent twinning criterion.

    ``psi1`` applies to the smallest cell volume ``v_min`` and ``psi2`` to
    the largest ``v_max``; between them the critical propensity follows
    the grain-size function h(V) = (6V/pi)^(-1/6).  With
    ``hall_petch_orientation`` set, the roles of the endpoints swap so the
    smallest cell receives the larger threshold.
    """

    psi1: float
    psi2: float
    v_min: float
    v_max: float
    d_l: np.ndarray = field(default_factory=lambda: DEFAULT_LOADING.copy())
    hall_petch_orientation: bool = False

    def __post_init__(self):
        if not (0 < self.psi1 < self.psi2 < 1):
            raise ValueError("need 0 < psi1 < psi2 < 1")
        if not (0 < self.v_min < self.v_max):
            raise ValueError("need 0 < v_min < v_max")
        d = _unit(self.d_l, "d_l")
        d.flags.writeable = False
        object.__setattr__(self, "d_l", d)


@dataclass(frozen=True)
class TwinState:
    """Per-cell twinning outcome."""

    propensity: float
    r_bar_index: int
    n_vec: np.ndarray
    e_scalar: float
    v_t: float
    reorientation: Orientation
    decision: bool
    psi_crit: float
    resolvable: bool = True


def schmid_factor(g, a1, n1, d_l=DEFAULT_LOADING):
    """Schmid factor <n1, G D_l> <a1, G D_l>, in [-0.5, 0.5]."""
    gd = g.matrix @ np.asarray(d_l, dtype=float)
    return float((n1 @ gd) * (a1 @ gd))


def propensity(g, sys, d_l=DEFAULT_LOADING):
    """Propensity for twinning: max Schmid factor over symmetry variants.

    The per-variant products are evaluated with fixed left-to-right
    component arithmetic, so an independent enumeration over the group
    reproduces the result bit for bit.

    Returns
    -------
    (psi, r_index) : (float, int)
        The maximum and the index of the maximizing group element
        (smallest index on ties; ties are logged).
    """
    group = cubic_group()
    gd = g.matrix @ np.asarray(d_l, dtype=float)
    na = group.elements @ sys.n1        # (24, 3) rotated plane normals
    aa = group.elements @ sys.a1
    ndot = na[:, 0] * gd[0] + na[:, 1] * gd[1] + na[:, 2] * gd[2]
    adot = aa[:, 0] * gd[0] + aa[:, 1] * gd[1] + aa[:, 2] * gd[2]
    chi = ndot * adot
    best = int(np.argmax(chi))
    top = chi[best]
    ties = np.nonzero(chi >= top - 1e-15)[0]
    if len(ties) > 1:
        log.debug("propensity tie across %d variants; keeping index %d",
                  len(ties), best)
    return float(top), best


def twin_normal(g, sys, r_index):
    """Unit twin-plane normal in the specimen frame: G^-1 R n1."""
    r = cubic_group().elements[r_index]
    return g.matrix.T @ (r @ sys.n1)


def reorientation(sys, r_index, g):
    """Orientation of the twinned lattice: 180-degree flip about a1-bar.

    R_t = 2 a1b (x) a1b - I applied to G, where a1b = R a1 for the active
    variant R.
    """
    a1b = cubic_group().elements[r_index] @ sys.a1
    rt = 2.0 * np.outer(a1b, a1b) - np.eye(3)
    return Orientation(rt @ g.matrix)


def twin_strain(g, sys, r_index, d_l=DEFAULT_LOADING):
    """Lagrangian strain of the twinning shear and its loading-axis value.

    F = I + s a1b (x) n1b gives E_L = (F^T F - I)/2; the scalar strain is
    the quadratic form of E_L at G D_l.

    Returns
    -------
    (E_L, e_scalar) : ((3, 3) ndarray, float)
    """
    r = cubic_group().elements[r_index]
    a1b = r @ sys.a1
    n1b = r @ sys.n1
    f = np.eye(3) + sys.shear_s * np.outer(a1b, n1b)
    e_l = 0.5 * (f.T @ f - np.eye(3))
    gd = g.matrix @ np.asarray(d_l, dtype=float)
    return e_l, float(gd @ e_l @ gd)


def twin_volume_fraction(epsilon_m, e_scalar):
    """Lamella volume fraction V_t = epsilon_m / E-bar, in (0, 1).

    Raises
    ------
    FractionOverflow
        If epsilon_m >= e_scalar, i.e. the macroscopic strain cannot be
        reached by twinning this cell completely.
    """
    if not 0 < epsilon_m < 1:
        raise ValueError("epsilon_m must be in (0, 1)")
    if e_scalar <= 0 or epsilon_m >= e_scalar:
        raise FractionOverflow(
            f"V_t = {epsilon_m}/{e_scalar} not in (0, 1)")
    return epsilon_m / e_scalar


def _h(v):
    return (6.0 * v / np.pi) ** (-1.0 / 6.0)


def critical_propensity(v, p):
    """Volume-dependent critical propensity between psi1 and psi2.

    Linear in h(V) = (6V/pi)^(-1/6) with psi(v_min) = psi1 and
    psi(v_max) = psi2; monotone increasing in V for psi2 > psi1.  The
    ``hall_petch_orientation`` flag swaps the endpoints so small cells get
    the larger threshold instead.
    """
    slack = 1e-12 * max(p.v_max, 1.0)
    if v < p.v_min - slack or v > p.v_max + slack:
        raise OutOfRange(f"volume {v} outside [{p.v_min}, {p.v_max}]")
    v = min(max(v, p.v_min), p.v_max)
    if p.hall_petch_orientation:
        ratio = (_h(v) - _h(p.v_max)) / (_h(p.v_min) - _h(p.v_max))
    else:
        ratio = (_h(v) - _h(p.v_min)) / (_h(p.v_max) - _h(p.v_min))
    return float(p.psi1 + ratio * (p.psi2 - p.psi1))


def twin_decision(psi, psi_crit):
    """Twinning occurs iff the propensity reaches the critical value."""
    return bool(psi >= psi_crit)


def evaluate_cell(g, cell_volume, sys, params, epsilon_m):
    """Full twinning evaluation of one marked cell.

    Combines propensity, the critical-propensity decision, the twin
    normal, the reorientation and the lamella volume fraction.  Cells
    whose decision is positive but whose strain cannot accommodate the
    macroscopic strain (V_t >= 1) come back with ``resolvable=False`` and
    a negative decision, to be emitted untwinned.
    """
    psi, r_index = propensity(g, sys, params.d_l)
    psi_c = critical_propensity(cell_volume, params)
    decided = twin_decision(psi, psi_c)
    n_vec = twin_normal(g, sys, r_index)
    _, e_scalar = twin_strain(g, sys, r_index, params.d_l)
    reor = reorientation(sys, r_index, g)
    v_t = 0.0
    resolvable = True
    if decided:
        try:
            v_t = twin_volume_fraction(epsilon_m, e_scalar)
        except FractionOverflow:
            log.warning("cell unresolvable: strain %.4f cannot reach "
                        "epsilon_m %.4f", e_scalar, epsilon_m)
            decided = False
            resolvable = False
    return TwinState(psi, r_index, n_vec, e_scalar, v_t, reor, decided,
                     psi_c, resolvable)
