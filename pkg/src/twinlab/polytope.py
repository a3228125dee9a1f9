"""Convex polytope geometry in 3D.

Cells of a Laguerre tessellation and the lamella slabs cut from them are
convex polytopes.  This module provides the geometric core used everywhere
else:

- `Box` - axis-aligned box domain
- `Halfspace` - closed halfspace ``{x : <normal, x> <= offset}``
- `ConvexPolytope` - vertex/face representation with cached volume/centroid
- `intersect_halfspaces(halfspaces, box)` - incremental clipping construction
- `volume(p)`, `centroid(p)` - tetrahedron decomposition measures
- `feret_interval(p, direction)` - directional projection interval
- `clip_slab(p, feret, lo, hi)` - slab cut between two parallel planes
- `volume_function(p, feret, t)` - volume below a moving plane
- `VolumeProfile` - exact piecewise description of the volume function,
  cheap to evaluate many times for one (polytope, direction) pair

Empty intersections are a legitimate outcome (dominated Laguerre generators
produce them), so emptiness is a value (`ConvexPolytope.EMPTY`-like objects
with ``is_empty == True``), never an exception.

All objects are immutable after construction; functions are pure.
"""

from dataclasses import dataclass

import numpy as np

# Vertices closer than this fraction of the box diagonal are merged.
VERTEX_MERGE_REL = 1e-9
# Faces with area below this do not count as shared faces (adjacency).
FACE_AREA_MIN = 1e-10


class InvalidSlab(ValueError):
    """Slab bounds are inverted or outside the Feret interval."""


class OutOfRange(ValueError):
    """Level parameter outside the Feret interval."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]`` in R^3."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if not np.all(hi > lo):
            raise ValueError("box must have positive extent in every axis")
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))

    @property
    def volume(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        return float(np.prod(hi - lo))

    @property
    def diagonal(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        return float(np.linalg.norm(hi - lo))

    def contains(self, points, tol=0.0):
        """Boolean mask of points inside the box (within ``tol``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.array(self.lo), np.array(self.hi)
        ok = np.all(pts >= lo - tol, axis=1) & np.all(pts <= hi + tol, axis=1)
        return ok if ok.size > 1 else bool(ok[0])

    def sample(self, n, rng):
        """n independent uniform points in the box."""
        lo, hi = np.array(self.lo), np.array(self.hi)
        return lo + rng.random((n, 3)) * (hi - lo)

    def halfspaces(self):
        """The six wall halfspaces of the box."""
        out = []
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = 1.0
            out.append(Halfspace(e, self.hi[ax]))
            out.append(Halfspace(-e, -self.lo[ax]))
        return out


class Halfspace:
    """Closed halfspace ``{x in R^3 : <normal, x> <= offset}``.

    Parameters
    ----------
    normal : array_like, shape (3,)
        Outward unit normal; must have unit norm within 1e-12.
    offset : float
        Plane offset along the normal.
    """

    __slots__ = ("normal", "offset")

    def __init__(self, normal, offset):
        normal = np.asarray(normal, dtype=float)
        nrm = np.linalg.norm(normal)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"halfspace normal must be unit length, got {nrm!r}")
        self.normal = normal.copy()
        self.normal.flags.writeable = False
        self.offset = float(offset)

    @classmethod
    def from_direction(cls, direction, offset):
        """Build from a not-necessarily-unit direction, rescaling the offset."""
        direction = np.asarray(direction, dtype=float)
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            raise ValueError("zero direction")
        return cls(direction / nrm, offset / nrm)

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def __repr__(self):
        return f"Halfspace(normal={tuple(self.normal)}, offset={self.offset})"


# ---------------------------------------------------------------------------
# face-soup clipping core
#
# During construction a polytope is a "soup": one flat (N, 3) vertex buffer
# plus [start, end) index ranges, one per face, wound outward.  Clipping by
# one plane touches only the faces the plane actually crosses, which keeps
# the per-plane cost low when cells have many faces.
# ---------------------------------------------------------------------------


class _Soup:
    __slots__ = ("verts", "starts", "counts", "tags")

    def __init__(self, verts, starts, counts, tags):
        self.verts = verts      # (N, 3) concatenated face polygons
        self.starts = starts    # (F,) start index per face
        self.counts = counts    # (F,) vertex count per face
        self.tags = tags        # (F,) int source tag per face

    @classmethod
    def from_box(cls, box):
        lo, hi = np.array(box.lo), np.array(box.hi)
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        # outward winding (CCW seen from outside)
        faces = [
            [(x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)],  # -x
            [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],  # +x
            [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],  # -y
            [(x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)],  # +y
            [(x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)],  # -z
            [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)],  # +z
        ]
        verts = np.array([v for f in faces for v in f], dtype=float)
        counts = np.full(6, 4, dtype=np.intp)
        starts = np.arange(6, dtype=np.intp) * 4
        tags = np.full(6, -1, dtype=np.intp)
        return cls(verts, starts, counts, tags)

    @property
    def n_faces(self):
        return len(self.starts)

    def clip(self, normal, offset, tag, tol):
        """Clip by ``<normal, x> <= offset``; returns a new soup or None if empty.

        ``tag`` labels the cap face cut by this plane (generator index for
        radical planes, -1 for box walls).
        """
        s = self.verts @ normal - offset
        if len(self.starts) == 0:
            return None
        fmax = np.maximum.reduceat(s, self.starts)
        fmin = np.minimum.reduceat(s, self.starts)

        if np.all(fmax <= tol):
            return self  # plane does not cut anything off
        if np.all(fmin >= -tol):
            return None  # everything is outside

        keep = fmax <= tol
        cross = ~keep & (fmin < -tol)

        new_polys = []
        new_tags = []
        for fi in np.nonzero(keep)[0]:
            a, c = self.starts[fi], self.counts[fi]
            new_polys.append(self.verts[a:a + c])
            new_tags.append(self.tags[fi])

        cut_pts = []
        for fi in np.nonzero(cross)[0]:
            a, c = self.starts[fi], self.counts[fi]
            poly, cuts = _clip_polygon(self.verts[a:a + c], s[a:a + c], tol)
            if len(poly) >= 3:
                new_polys.append(np.asarray(poly))
                new_tags.append(self.tags[fi])
            cut_pts.extend(cuts)

        if not new_polys:
            return None

        cap = _cap_face(cut_pts, normal, tol)
        if cap is not None:
            new_polys.append(cap)
            new_tags.append(tag)

        counts = np.array([len(p) for p in new_polys], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(counts[:-1])))
        verts = np.concatenate(new_polys, axis=0)
        return _Soup(verts, starts, counts, np.array(new_tags, dtype=np.intp))

    def volume(self):
        """Volume via fan triangulation of outward-wound faces (origin tets)."""
        total = 0.0
        for a, c in zip(self.starts, self.counts):
            poly = self.verts[a:a + c]
            v0 = poly[0]
            cr = np.cross(poly[1:-1] - v0, poly[2:] - v0)
            total += float(np.sum(cr @ v0))
        return abs(total) / 6.0

    def face_areas(self):
        areas = np.empty(self.n_faces)
        for i, (a, c) in enumerate(zip(self.starts, self.counts)):
            areas[i] = _polygon_area(self.verts[a:a + c])
        return areas


def _clip_polygon(poly, s, tol):
    """Sutherland-Hodgman step for one convex polygon.

    ``s`` are the signed distances of its vertices; inside is ``s <= 0``.
    Returns ``(kept_vertices, points_on_the_plane)``.
    """
    n = len(poly)
    out = []
    cuts = []
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        si, sj = s[i], s[j]
        if si <= tol:
            out.append(poly[i])
            if si >= -tol:
                cuts.append(poly[i])
        if (si < -tol and sj > tol) or (si > tol and sj < -tol):
            t = si / (si - sj)
            q = poly[i] + t * (poly[j] - poly[i])
            out.append(q)
            cuts.append(q)
    return out, cuts


def _plane_basis(normal):
    """Two orthonormal vectors u, v with u x v = normal."""
    a = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, normal)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def _cap_face(cut_pts, normal, tol):
    """Assemble the polygon closing a cut, wound outward (+normal side)."""
    if len(cut_pts) < 3:
        return None
    pts = np.asarray(cut_pts)
    # dedupe within tolerance
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        d = np.linalg.norm(pts[i + 1:] - pts[i], axis=1)
        keep[i + 1:] &= d > 10 * tol
    pts = pts[keep]
    if len(pts) < 3:
        return None
    u, v = _plane_basis(normal)
    ctr = pts.mean(axis=0)
    ang = np.arctan2((pts - ctr) @ v, (pts - ctr) @ u)
    order = np.argsort(ang)
    cap = pts[order]
    # ascending angle in the (u, v) frame winds CCW about u x v = normal;
    # the cap's outward normal is +normal since the inside is s <= 0
    if _polygon_area(cap) <= 0.0:
        return None
    return cap


def _polygon_area(poly):
    v0 = poly[0]
    cr = np.cross(poly[1:-1] - v0, poly[2:] - v0)
    return 0.5 * float(np.linalg.norm(cr.sum(axis=0)))


# ---------------------------------------------------------------------------
# public polytope type
# ---------------------------------------------------------------------------


class ConvexPolytope:
    """Bounded convex polytope with explicit vertex/face representation.

    Faces are vertex-index cycles wound outward.  ``face_tags`` carries the
    provenance of each face (-1 for domain walls, otherwise the index of the
    halfspace/generator that cut it); tessellation adjacency reads it.

    Instances are immutable.  The empty polytope is a value with
    ``is_empty == True`` and volume 0.
    """

    __slots__ = ("vertices", "faces", "halfspaces", "face_tags",
                 "_volume", "_centroid")

    def __init__(self, vertices, faces, halfspaces=(), face_tags=None):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.vertices.flags.writeable = False
        self.faces = tuple(tuple(int(i) for i in f) for f in faces)
        self.halfspaces = tuple(halfspaces)
        if face_tags is None:
            face_tags = (-1,) * len(self.faces)
        self.face_tags = tuple(int(t) for t in face_tags)
        self._volume = None
        self._centroid = None

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), [], ())

    @classmethod
    def from_box(cls, box):
        return intersect_halfspaces([], box)

    @property
    def is_empty(self):
        return len(self.faces) == 0

    @property
    def volume(self):
        if self._volume is None:
            self._volume, self._centroid = _measure(self)
        return self._volume

    @property
    def centroid(self):
        if self._centroid is None:
            self._volume, self._centroid = _measure(self)
        return self._centroid

    def contains(self, point, tol=1e-9):
        """True if the point satisfies every face plane (within ``tol``)."""
        if self.is_empty:
            return False
        point = np.asarray(point, dtype=float)
        for f in self.faces:
            poly = self.vertices[list(f)]
            n = _face_normal(poly)
            if (point - poly[0]) @ n > tol:
                return False
        return True

    def edges(self):
        """Unique vertex-index pairs (i < j) over all face cycles."""
        seen = set()
        for f in self.faces:
            k = len(f)
            for a in range(k):
                i, j = f[a], f[(a + 1) % k]
                seen.add((i, j) if i < j else (j, i))
        return sorted(seen)

    def __repr__(self):
        if self.is_empty:
            return "ConvexPolytope(empty)"
        return (f"ConvexPolytope({len(self.vertices)} vertices, "
                f"{len(self.faces)} faces)")


def _face_normal(poly):
    v0 = poly[0]
    cr = np.cross(poly[1:-1] - v0, poly[2:] - v0).sum(axis=0)
    nrm = np.linalg.norm(cr)
    return cr / nrm if nrm > 0 else cr


def _measure(p):
    """(volume, centroid) by signed tetrahedra from the vertex mean."""
    if p.is_empty:
        return 0.0, np.zeros(3)
    ref = p.vertices.mean(axis=0)
    vol = 0.0
    mom = np.zeros(3)
    for f in p.faces:
        poly = p.vertices[list(f)] - ref
        v0 = poly[0]
        for a in range(1, len(poly) - 1):
            d = float(np.dot(np.cross(poly[a], poly[a + 1]), v0))
            # tets from an interior point are disjoint, orientation-free
            tv = abs(d) / 6.0
            vol += tv
            mom += tv * (v0 + poly[a] + poly[a + 1]) / 4.0
    if vol == 0.0:
        return 0.0, ref
    return vol, ref + mom / vol


def _soup_to_polytope(soup, halfspaces, merge_tol):
    """Merge duplicate soup vertices and emit an indexed ConvexPolytope."""
    if soup is None or soup.n_faces == 0:
        return ConvexPolytope.empty()
    verts = soup.verts
    # quantized hashing, then exact-distance merge inside buckets
    q = np.round(verts / merge_tol).astype(np.int64)
    index = {}
    remap = np.empty(len(verts), dtype=np.intp)
    unique = []
    for i, key in enumerate(map(tuple, q)):
        hit = index.get(key)
        if hit is None:
            index[key] = len(unique)
            remap[i] = len(unique)
            unique.append(verts[i])
        else:
            remap[i] = hit
    unique = np.asarray(unique)

    faces = []
    tags = []
    for a, c, t in zip(soup.starts, soup.counts, soup.tags):
        cycle = []
        for idx in remap[a:a + c]:
            if not cycle or cycle[-1] != idx:
                cycle.append(int(idx))
        if len(cycle) > 1 and cycle[0] == cycle[-1]:
            cycle.pop()
        if len(cycle) >= 3:
            faces.append(cycle)
            tags.append(int(t))
    if not faces:
        return ConvexPolytope.empty()
    used = sorted({i for f in faces for i in f})
    lookup = {v: k for k, v in enumerate(used)}
    faces = [[lookup[i] for i in f] for f in faces]
    return ConvexPolytope(unique[used], faces, halfspaces, tags)


def intersect_halfspaces(halfspaces, bounding_box, tags=None):
    """Intersect halfspaces with a box by incremental plane clipping.

    Parameters
    ----------
    halfspaces : sequence of Halfspace
    bounding_box : Box
        Seed polytope; the result is always clipped to it.
    tags : sequence of int, optional
        Provenance tag per halfspace for the resulting face_tags.

    Returns
    -------
    ConvexPolytope
        May be empty (``is_empty``); emptiness is a value, not an error.
    """
    box = bounding_box
    soup = _Soup.from_box(box)
    tol = VERTEX_MERGE_REL * box.diagonal
    if tags is None:
        tags = range(len(halfspaces))
    for h, t in zip(halfspaces, tags):
        soup = soup.clip(h.normal, h.offset, t, tol)
        if soup is None:
            return ConvexPolytope.empty()
    all_hs = tuple(halfspaces) + tuple(box.halfspaces())
    return _soup_to_polytope(soup, all_hs, tol)


def volume(p):
    """Volume of a convex polytope (tetrahedron decomposition)."""
    return p.volume


def centroid(p):
    """Volume centroid of a convex polytope."""
    return p.centroid


@dataclass(frozen=True)
class FeretInterval:
    """Projection interval of a polytope onto a direction through its centroid.

    ``alpha``/``beta`` bound ``<v - anchor, direction>`` over vertices v;
    ``rho = beta - alpha`` is the Feret diameter in that direction.
    """

    alpha: float
    beta: float
    rho: float
    direction: np.ndarray
    anchor: np.ndarray

    def level_plane(self, t):
        """Offset of the plane ``<direction, x> = <direction, anchor> + t``."""
        return float(self.direction @ self.anchor) + t


def feret_interval(p, direction):
    """Project a polytope onto a line through its centroid.

    Parameters
    ----------
    p : ConvexPolytope
        Nonempty polytope.
    direction : array_like, shape (3,)
        Unit projection direction.

    Returns
    -------
    FeretInterval
    """
    if p.is_empty:
        raise ValueError("feret_interval of an empty polytope")
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    c = p.centroid
    proj = (p.vertices - c) @ direction
    alpha, beta = float(proj.min()), float(proj.max())
    return FeretInterval(alpha, beta, beta - alpha, direction, c)


def clip_slab(p, f, lo, hi):
    """Cut the slab ``lo <= <x - anchor, direction> <= hi`` out of ``p``.

    Raises
    ------
    InvalidSlab
        If ``lo >= hi`` or the slab lies outside ``[alpha, beta]``.
    """
    if lo >= hi:
        raise InvalidSlab(f"need lo < hi, got [{lo}, {hi}]")
    if hi < f.alpha or lo > f.beta:
        raise InvalidSlab(f"slab [{lo}, {hi}] outside [{f.alpha}, {f.beta}]")
    hs = [
        Halfspace(f.direction, f.level_plane(hi)),
        Halfspace(-f.direction, -f.level_plane(lo)),
    ]
    return _clip_by_planes(p, hs)


def _clip_by_planes(p, halfspaces):
    """Clip an existing polytope by extra planes, preserving face tags."""
    if p.is_empty:
        return p
    polys = [p.vertices[list(f)] for f in p.faces]
    counts = np.array([len(q) for q in polys], dtype=np.intp)
    starts = np.concatenate(([0], np.cumsum(counts[:-1])))
    soup = _Soup(np.concatenate(polys, axis=0), starts, counts,
                 np.asarray(p.face_tags, dtype=np.intp))
    span = p.vertices.max(axis=0) - p.vertices.min(axis=0)
    tol = VERTEX_MERGE_REL * max(float(np.linalg.norm(span)), 1.0)
    for h in halfspaces:
        soup = soup.clip(h.normal, h.offset, -1, tol)
        if soup is None:
            return ConvexPolytope.empty()
    return _soup_to_polytope(soup, tuple(p.halfspaces) + tuple(halfspaces), tol)


def volume_function(p, f, t):
    """Volume of the part of ``p`` below level ``t`` along ``f.direction``.

    ``t`` must lie in ``[alpha, beta]`` (1e-9 slack); the function runs from
    0 at ``alpha`` to the full volume at ``beta``.

    Raises
    ------
    OutOfRange
        If ``t`` is outside the interval beyond the slack.
    """
    slack = 1e-9 * max(abs(f.alpha), abs(f.beta), 1.0)
    if t < f.alpha - slack or t > f.beta + slack:
        raise OutOfRange(f"t={t} outside [{f.alpha}, {f.beta}]")
    t = min(max(t, f.alpha), f.beta)
    return VolumeProfile(p, f).evaluate(t)


class VolumeProfile:
    """Exact volume-below-level function for one (polytope, direction) pair.

    Between consecutive vertex levels the cross-section area is a quadratic
    polynomial of the level, so sampling it at the two ends and the midpoint
    of each gap determines the volume function exactly (Simpson integration
    of a quadratic is exact).  Evaluation afterwards is O(log levels).
    """

    __slots__ = ("feret", "levels", "cumvol", "coeffs")

    def __init__(self, p, f):
        self.feret = f
        proj = (p.vertices - f.anchor) @ f.direction
        raw = np.unique(proj)
        gap = 1e-12 * max(f.rho, 1e-300)
        keep = [raw[0]]
        for t in raw[1:]:
            if t - keep[-1] > gap:
                keep.append(t)
        levels = np.asarray(keep, dtype=float)
        if len(levels) < 2:
            levels = np.array([f.alpha, f.beta])
        levels[0], levels[-1] = f.alpha, f.beta

        edges = p.edges()
        ev = p.vertices
        e0 = np.array([i for i, _ in edges], dtype=np.intp)
        e1 = np.array([j for _, j in edges], dtype=np.intp)
        p0 = ev[e0]
        d01 = ev[e1] - p0
        s0 = proj[e0]
        s1 = proj[e1]

        def section_area(t):
            lo_, hi_ = np.minimum(s0, s1), np.maximum(s0, s1)
            hit = (lo_ <= t) & (hi_ >= t) & (hi_ - lo_ > 0)
            if not np.any(hit):
                return 0.0
            w = (t - s0[hit]) / (s1[hit] - s0[hit])
            pts = p0[hit] + w[:, None] * d01[hit]
            if len(pts) < 3:
                return 0.0
            u, v = _plane_basis(self.feret.direction)
            rel = pts - pts.mean(axis=0)
            ang = np.arctan2(rel @ v, rel @ u)
            ordr = np.argsort(ang)
            x, y = (rel @ u)[ordr], (rel @ v)[ordr]
            return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

        n_seg = len(levels) - 1
        self.levels = levels
        self.coeffs = np.zeros((n_seg, 3))
        self.cumvol = np.zeros(len(levels))
        acc = 0.0
        for k in range(n_seg):
            a, b = levels[k], levels[k + 1]
            h = b - a
            if h <= 0:
                self.cumvol[k + 1] = acc
                continue
            al = section_area(a)
            am = section_area(0.5 * (a + b))
            ar = section_area(b)
            # quadratic through (0, al), (h/2, am), (h, ar)
            c2 = 2.0 * (al - 2.0 * am + ar) / (h * h)
            c1 = (-3.0 * al + 4.0 * am - ar) / h
            self.coeffs[k] = (al, c1, c2)
            acc += h * (al + 4.0 * am + ar) / 6.0
            self.cumvol[k + 1] = acc

    @property
    def total(self):
        return float(self.cumvol[-1])

    def evaluate(self, t):
        """Volume of the polytope part with projection <= t."""
        f = self.feret
        if t <= f.alpha:
            return 0.0
        if t >= f.beta:
            return self.total
        k = int(np.searchsorted(self.levels, t, side="right")) - 1
        k = min(max(k, 0), len(self.levels) - 2)
        x = t - self.levels[k]
        a0, a1, a2 = self.coeffs[k]
        return float(self.cumvol[k] + a0 * x + a1 * x * x / 2.0 + a2 * x ** 3 / 3.0)
