"""Cubic crystallographic orientations and texture sampling.

Orientations are proper rotations carrying both a matrix and a unit
quaternion view; two orientations are equivalent when they differ by one of
the 24 rotations of the cube.  This module contains:

- `Orientation` - immutable rotation (matrix + canonical quaternion)
- `cubic_group()` - the 24-element cubic rotation group
- `disorientation(g1, g2)` - minimal rotation angle modulo cubic symmetry
- `tilt(g, v, u)` - maximal cosine alignment of v with the orbit of G u
- `sample_uniform(rng)` / `sample_odf(params, rng)` - Haar and
  texture-density sampling (rejection method)
- `moving_average_marks(adjacency, marks)` - neighborhood quaternion
  averaging for dependent cell marking
- `representative_quat(g)` - fundamental-zone quaternion representative
- `ipf_coordinates(g, direction)` - inverse-pole-figure point in the
  standard stereographic triangle

The random stream is always passed explicitly (`numpy.random.Generator`).
"""

import itertools
from dataclasses import dataclass

import numpy as np


class ZeroVector(ValueError):
    """A direction argument has zero length."""


class IsolatedCell(ValueError):
    """A cell has no neighbors to average over."""


class DegenerateSum(ValueError):
    """Neighbor quaternion sum has near-zero norm; no average direction."""


def _quat_to_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quats_to_mats(q):
    """(n, 4) unit quaternions to (n, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _mat_to_quat(m):
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0.

    Branches on the largest of trace/diagonal for numerical stability.
    """
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0:
        s = 2.0 * np.sqrt(1.0 + t)
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_mult(qa, qb):
    """Hamilton product; rotation of the product composes the rotations."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    a = np.atleast_2d(qa)
    b = np.atleast_2d(qb)
    w = a[:, 0] * b[:, 0] - a[:, 1] * b[:, 1] - a[:, 2] * b[:, 2] - a[:, 3] * b[:, 3]
    x = a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0] + a[:, 2] * b[:, 3] - a[:, 3] * b[:, 2]
    y = a[:, 0] * b[:, 2] - a[:, 1] * b[:, 3] + a[:, 2] * b[:, 0] + a[:, 3] * b[:, 1]
    z = a[:, 0] * b[:, 3] + a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1] + a[:, 3] * b[:, 0]
    out = np.stack([w, x, y, z], axis=1)
    if qa.ndim == 1 and qb.ndim == 1:
        return out[0]
    return out


class Orientation:
    """Proper rotation representing a cubic lattice orientation.

    Holds a 3x3 rotation matrix and the matching unit quaternion
    (w, x, y, z) canonicalized to nonnegative scalar part.  Immutable.
    """

    __slots__ = ("matrix", "quat")

    def __init__(self, matrix, quat=None, check=True):
        matrix = np.asarray(matrix, dtype=float).reshape(3, 3)
        if check:
            if np.abs(matrix @ matrix.T - np.eye(3)).max() > 1e-10:
                raise ValueError("matrix is not orthogonal within 1e-10")
            if abs(np.linalg.det(matrix) - 1.0) > 1e-10:
                raise ValueError("matrix determinant is not +1 within 1e-10")
        if quat is None:
            quat = _mat_to_quat(matrix)
        else:
            quat = np.asarray(quat, dtype=float).copy()
            if quat[0] < 0:
                quat = -quat
        matrix = matrix.copy()
        matrix.flags.writeable = False
        quat.flags.writeable = False
        self.matrix = matrix
        self.quat = quat

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.array([1.0, 0.0, 0.0, 0.0]), check=False)

    @classmethod
    def from_matrix(cls, m):
        return cls(m)

    @classmethod
    def from_quat(cls, q):
        q = np.asarray(q, dtype=float)
        q = q / np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        return cls(_quat_to_mat(q), q, check=False)

    @classmethod
    def from_axis_angle(cls, axis, angle):
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        q = np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis))
        return cls.from_quat(q)

    def compose(self, other):
        """Rotation self applied after other: matrix product self @ other."""
        return Orientation(self.matrix @ other.matrix, check=False)

    def apply(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def __repr__(self):
        w, x, y, z = self.quat
        return f"Orientation(quat=({w:.6f}, {x:.6f}, {y:.6f}, {z:.6f}))"


@dataclass(frozen=True)
class OdfParams:
    """Texture density parameters: f(G) proportional to exp(kappa * tilt)."""

    kappa: float
    u: tuple = (0.0, 0.0, 1.0)
    v: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if np.linalg.norm(self.u) == 0 or np.linalg.norm(self.v) == 0:
            raise ZeroVector("u and v must be nonzero")


class SymmetryGroup:
    """The 24 proper rotations of the cube, in a fixed deterministic order."""

    __slots__ = ("elements", "quats")

    def __init__(self, elements):
        elements = np.asarray(elements, dtype=float)
        if elements.shape != (24, 3, 3):
            raise ValueError("cubic group must have exactly 24 elements")
        self.elements = elements
        self.elements.flags.writeable = False
        quats = np.array([_canonical_group_quat(m) for m in elements])
        quats.flags.writeable = False
        self.quats = quats

    def __len__(self):
        return 24

    def __iter__(self):
        return iter(self.elements)


def _canonical_group_quat(m):
    """Quaternion of a group element with a deterministic sign.

    Group elements with 180-degree angle have w = 0; pick the sign making
    the first nonzero component positive.
    """
    q = _mat_to_quat(m)
    if q[0] > 1e-9:
        return q
    nz = np.nonzero(np.abs(q) > 1e-9)[0][0]
    return q if q[nz] > 0 else -q


_CUBIC = None


def cubic_group():
    """The 24-element rotation group of the cube.

    Elements are signed permutation matrices with determinant +1, ordered
    with the identity first and the rest lexicographically by their
    flattened entries.
    """
    global _CUBIC
    if _CUBIC is None:
        mats = []
        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((1.0, -1.0), repeat=3):
                m = np.zeros((3, 3))
                for row in range(3):
                    m[row, perm[row]] = signs[row]
                if np.linalg.det(m) > 0.5:
                    mats.append(m)
        eye = np.eye(3)
        mats.sort(key=lambda m: (np.abs(m - eye).max() > 1e-12,
                                 tuple(m.ravel())))
        _CUBIC = SymmetryGroup(np.array(mats))
    return _CUBIC


def disorientation(g1, g2):
    """Disorientation angle (radians) between two orientations.

    Minimal rotation angle over all cubic-symmetry images; symmetric in
    its arguments, zero iff the orientations are equivalent.
    """
    group = cubic_group()
    b = g2.matrix @ g1.matrix.T
    traces = np.einsum("rij,ji->r", group.elements, b)
    c = (traces.max() - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def tilt(g, v, u):
    """Tilt of G with respect to directions v and u.

    max over the cubic group of <v, R G u> / (|v| |u|); the cosine of the
    smallest angle between v and the symmetry orbit of G u.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    nv, nu = np.linalg.norm(v), np.linalg.norm(u)
    if nv == 0 or nu == 0:
        raise ZeroVector("tilt needs nonzero v and u")
    orbit = cubic_group().elements @ (g.matrix @ u)
    return float((orbit @ v).max() / (nv * nu))


def _tilt_batch(mats, v, u):
    """Tilt for a stack of rotation matrices; (n,) values."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    w = mats @ u                                   # (n, 3)
    orbit = np.einsum("rij,nj->nri", cubic_group().elements, w)
    return orbit @ v / (np.linalg.norm(v) * np.linalg.norm(u))


def _uniform_quats(n, rng):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def sample_uniform(rng):
    """One Haar-uniform random orientation."""
    return sample_uniform_many(1, rng)[0]


def sample_uniform_many(n, rng):
    """n independent Haar-uniform orientations."""
    quats = _uniform_quats(n, rng)
    mats = _quats_to_mats(quats)
    return [Orientation(m, q, check=False) for m, q in zip(mats, quats)]


def sample_odf(params, rng):
    """One sample from the texture density exp(kappa * tilt(G, v, u)).

    Exact rejection sampling: Haar proposals accepted with probability
    exp(kappa * (tilt - 1)) <= 1.  kappa = 0 accepts everything.
    """
    return sample_odf_many(params, 1, rng)[0]


def sample_odf_many(params, n, rng, max_proposals=10_000_000):
    """n independent samples from the tilt-based texture density."""
    if params.kappa == 0:
        return sample_uniform_many(n, rng)
    out = []
    proposed = 0
    batch = max(256, n)
    while len(out) < n:
        if proposed > max_proposals:
            raise RuntimeError(
                f"odf rejection sampler exceeded {max_proposals} proposals")
        quats = _uniform_quats(batch, rng)
        mats = _quats_to_mats(quats)
        tv = np.max(_tilt_batch(mats, params.v, params.u), axis=1)
        accept = rng.random(batch) < np.exp(params.kappa * (tv - 1.0))
        proposed += batch
        for idx in np.nonzero(accept)[0]:
            out.append(Orientation(mats[idx], quats[idx], check=False))
            if len(out) == n:
                break
    return out


def representative_quat(g):
    """Fundamental-zone quaternion representative of an orientation class.

    Among the 48 symmetry-equivalent quaternions {+-(q_R x q_G)} the one
    with maximal scalar part is chosen, ties broken lexicographically on
    (w, x, y, z).  Deterministic, so component-wise averaging of
    neighboring marks is well defined.
    """
    prods = quat_mult(cubic_group().quats, np.broadcast_to(g.quat, (24, 4)))
    cands = np.vstack([prods, -prods])
    order = np.lexsort((cands[:, 3], cands[:, 2], cands[:, 1], cands[:, 0]))
    return cands[order[-1]].copy()


def moving_average_marks(adjacency, marks, representative="hemisphere"):
    """Moving-average dependent marking over tessellation neighbors.

    For each cell the representative quaternions of its neighbors are
    summed component-wise and normalized; the result is the new (matrix)
    mark.  Input marks are not modified.

    The representative is the asymmetric-domain quaternion of each mark:
    by default the canonical nonnegative-scalar-part quaternion of the
    rotation ("hemisphere", the asymmetric domain of the two-to-one
    quaternion representation of SO(3)).  Averaging the 48-fold cubic
    fundamental-zone representatives ("fundamental_zone") is also
    available, but it concentrates the averaged marks near the identity
    orientation, which suppresses twinning propensities; the hemisphere
    convention keeps the averaged field broad, with smaller neighbor
    disorientations than independent marking.

    Parameters
    ----------
    adjacency : sequence of neighbor index lists
        Must be symmetric; cell i's list holds the indices j with C_i ~ C_j.
    marks : sequence of Orientation
    representative : {"hemisphere", "fundamental_zone"}

    Returns
    -------
    list of Orientation

    Raises
    ------
    IsolatedCell
        If some cell has no neighbors.
    DegenerateSum
        If a neighbor quaternion sum has norm < 1e-9.
    """
    if representative == "hemisphere":
        reps = np.array([g.quat for g in marks])
    elif representative == "fundamental_zone":
        reps = np.array([representative_quat(g) for g in marks])
    else:
        raise ValueError(f"unknown representative {representative!r}")
    out = []
    for i, nb in enumerate(adjacency):
        if len(nb) == 0:
            raise IsolatedCell(f"cell {i} has no neighbors")
        s = reps[list(nb)].sum(axis=0)
        nrm = np.linalg.norm(s)
        if nrm < 1e-9:
            raise DegenerateSum(f"neighbor quaternion sum of cell {i} is degenerate")
        out.append(Orientation.from_quat(s / nrm))
    return out


def ipf_coordinates(g, direction):
    """Inverse-pole-figure point of a specimen direction, one per orientation.

    The crystal-frame image G d is folded into the fundamental triangle
    (components permuted/sign-flipped so 0 <= y <= x <= z) and projected
    stereographically from the south pole onto the equatorial plane.  The
    triangle corners are <001> at (0, 0), <011> at about (0.414, 0) and
    <111> at about (0.366, 0.366).
    """
    direction = np.asarray(direction, dtype=float)
    r = g.matrix @ direction
    a = np.sort(np.abs(r))
    x, y, z = a[1], a[0], a[2]
    return np.array([x / (1.0 + z), y / (1.0 + z)])
