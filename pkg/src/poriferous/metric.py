"""Density transport, navigation weights, the conformal metric and the length metric.

The length metric is realized on a graph over the mesh vertices (mesh edges
plus straight shortcuts to the 3-ring that stay inside the image).  An edge
costs its image length times ``1 + sigma_0`` at its midpoint, which is the
surface length under the pulled-back metric.  Shortest-path fields from a
vertex are cached because the static weight does not change during a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import InsideObstacle, NoPath, SafetyViolation
from .mesh import unique_edges, vertex_adjacency

# ------------------------------------------------------------------- density


@dataclass
class DensityField:
    """Density on the surface.

    ``kind`` is ``'polar_exp'`` (exp(sin^2 t + cos t) + 0.01 r in the surface's
    planar polar coordinates), ``'uniform'`` or ``'samples'`` (per-vertex
    values, e.g. loaded from a text file with one value per line).
    """

    kind: str = "uniform"
    samples: np.ndarray = None
    scale: float = 1.0

    def at_points(self, xyz):
        xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
        if self.kind == "uniform":
            return np.full(len(xyz), self.scale)
        if self.kind == "polar_exp":
            t = np.arctan2(xyz[:, 1], xyz[:, 0])
            r = np.hypot(xyz[:, 0], xyz[:, 1])
            return self.scale * (np.exp(np.sin(t) ** 2 + np.cos(t)) + 0.01 * r)
        if self.kind == "zero":
            return np.zeros(len(xyz))
        raise ValueError(f"density kind {self.kind!r} has no pointwise form")

    def at_vertices(self, mesh):
        if self.kind == "samples":
            vals = np.asarray(self.samples, dtype=float)
            if vals.shape != (mesh.n_vertices,):
                raise ValueError("per-vertex density has the wrong length")
            return self.scale * vals
        return self.at_points(mesh.vertices)

    @classmethod
    def from_file(cls, path, scale=1.0):
        return cls("samples", np.loadtxt(Path(path), dtype=float).ravel(), scale)


def vertex_area_ratio(mm):
    """Per-vertex lambda^2: image area / surface area over incident faces."""
    from .conformal import signed_areas

    mesh = mm.source
    As = mesh.face_areas()
    Ai = signed_areas(mm.image, mesh.faces)
    num = np.zeros(mesh.n_vertices)
    den = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(num, mesh.faces[:, k], Ai)
        np.add.at(den, mesh.faces[:, k], As)
    return num / den


def transport_density(rho, mm):
    """Per-vertex density on the ball world: rho / lambda^2 (area form)."""
    vals = rho.at_vertices(mm.source) if isinstance(rho, DensityField) else np.asarray(rho, float)
    if np.any(vals < 0):
        raise ValueError("density must be non-negative")
    return vals / vertex_area_ratio(mm)


def face_mass(values, points, faces):
    """Midpoint-rule mass of a per-vertex field over a triangulation (planar or 3D)."""
    from .conformal import signed_areas

    if np.iscomplexobj(points):
        A = np.abs(signed_areas(points, faces))
    else:
        p = points[faces]
        A = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    return values[faces].mean(axis=1) * A


class ImageDensity:
    """Barycentric interpolation of a per-vertex field on the mapped image.

    Points outside the triangulation (inside obstacles, outside the disk)
    read as zero.
    """

    def __init__(self, mm, values):
        self.mm = mm
        self.values = np.asarray(values, dtype=float)

    def __call__(self, q):
        q = np.asarray(q, dtype=complex)
        shape = q.shape
        f, b = self.mm.locator.locate_many(q.ravel())
        out = np.zeros(f.shape)
        ok = f >= 0
        out[ok] = np.sum(b[ok] * self.values[self.mm.source.faces[f[ok]]], axis=1)
        return out.reshape(shape)

    def boundary_profile(self, k):
        """Angles (about the circle center) and values along obstacle loop k."""
        lp = self.mm.source.obstacle_loops[k]
        c = self.mm.circles[k].center
        ang = np.angle(self.mm.image[lp] - c)
        order = np.argsort(ang)
        return ang[order], self.values[lp][order]

    @property
    def sup(self):
        return float(np.max(self.values))


# ------------------------------------------------------------------- weights


@dataclass(frozen=True)
class MetricField:
    mu: float = 10.0
    r_a: float = 0.02
    centers: tuple = ()
    radii: tuple = ()

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.r_a > 0:
            raise ValueError("agent radius must be positive")

    @classmethod
    def from_circles(cls, circles, mu=10.0, r_a=0.02):
        return cls(mu, r_a, tuple(complex(c.center) for c in circles), tuple(float(c.radius) for c in circles))


def _barrier(s, mu):
    return 1.0 / np.expm1(mu * s)


def clearance(p, f: MetricField):
    """Signed clearance s_k = |p - o_k| - r_k for every obstacle (last axis)."""
    p = np.asarray(p, dtype=complex)
    if not f.centers:
        return np.zeros(p.shape + (0,))
    c = np.asarray(f.centers)
    r = np.asarray(f.radii)
    return np.abs(p[..., None] - c) - r


def static_weight(p, f: MetricField):
    """sigma_0(p) = sum_k 1 / (exp(mu s_k) - 1); raises inside an obstacle."""
    s = clearance(p, f)
    if np.any(s <= 0):
        raise InsideObstacle(f"point {p} is not outside every obstacle")
    out = np.sum(_barrier(s, f.mu), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def static_weight_field(p, f: MetricField):
    """Vectorized sigma_0 with +inf wherever the clearance is not positive."""
    s = clearance(p, f)
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(s > 0, _barrier(np.maximum(s, 1e-300), f.mu), np.inf)
    return np.sum(v, axis=-1)


def dynamic_weight(pi, neighbors, f: MetricField):
    """sigma_i = sigma_0 + sum_j 1 / (exp(mu (|p_i - p_j| - 2 r_a)) - 1)."""
    s0 = static_weight(pi, f)
    nb = np.asarray(list(neighbors), dtype=complex)
    if nb.size == 0:
        return s0
    sep = np.abs(nb - complex(pi)) - 2 * f.r_a
    if np.any(sep <= 0):
        raise SafetyViolation(f"agent separation {np.min(sep) + 2 * f.r_a:.4g} is not above 2 r_a")
    return s0 + float(np.sum(_barrier(sep, f.mu)))


def metric_tensor(p, sigma, lam=None, polar=False):
    """(1 + sigma)^2 times the flat metric, optionally pulled back by lambda^2.

    Cartesian form is (1+sigma)^2 I; ``polar=True`` returns the same tensor
    in the (r, theta) frame, (1+sigma)^2 diag(1, r^2).
    """
    g = (1.0 + sigma) ** 2
    if lam is not None:
        g = g * lam**2
    if polar:
        r = abs(complex(p))
        return g * np.diag([1.0, r * r])
    return g * np.eye(2)


def weight_rate_bound(mu, delta):
    """Lipschitz factor mu e^{mu d} / (e^{mu d} - 1)^2 of the pair barrier at clearance delta."""
    e = math.exp(mu * delta)
    return mu * e / (e - 1.0) ** 2


# ------------------------------------------------------------- length graph


@dataclass
class SurfacePoint:
    face: int
    bary: np.ndarray

    def image(self, mm):
        return complex(np.dot(self.bary, mm.image[mm.source.faces[self.face]]))

    def xyz(self, mesh):
        return np.asarray(self.bary) @ mesh.vertices[mesh.faces[self.face]]


class LengthGraph:
    """Shortest paths of the length metric on the mesh of a MappedMesh."""

    def __init__(self, mm, f: MetricField, augment=True, rings=3):
        self.mm = mm
        self.field = f
        mesh = mm.source
        img = mm.image
        e = unique_edges(mesh.faces)
        pairs = [e]
        if augment:
            # k-ring shortcuts keep the graph metric within a few percent of
            # straight-line length; a shortcut must stay inside the image
            A = vertex_adjacency(mesh.faces, mesh.n_vertices)
            Ak = A.copy()
            for _ in range(rings - 1):
                Ak = Ak + Ak @ A
            A2 = Ak.tocoo()
            m = A2.row < A2.col
            cand = np.column_stack([A2.row[m], A2.col[m]])
            known = set(map(tuple, e.tolist()))
            cand = np.array([c for c in cand.tolist() if tuple(c) not in known], dtype=np.int64).reshape(-1, 2)
            if len(cand):
                t = np.linspace(0.1, 0.9, 5)
                pts = img[cand[:, 0], None] * (1 - t) + img[cand[:, 1], None] * t
                fidx, _ = mm.locator.locate_many(pts.ravel())
                inside = np.all(fidx.reshape(pts.shape) >= 0, axis=1)
                pairs.append(cand[inside])
        E = np.concatenate(pairs)
        w = self.segment_cost(img[E[:, 0]], img[E[:, 1]])
        ok = np.isfinite(w) & (w > 0)
        E, w = E[ok], w[ok]
        n = mesh.n_vertices
        self.edges = E
        self.weights = w
        self.G = sparse.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([E[:, 0], E[:, 1]]), np.concatenate([E[:, 1], E[:, 0]]))), shape=(n, n)
        )
        self._cache = {}
        self._pred = {}
        self._links = {}
        self._near = {}
        self._sectors = {}
        self._all = None
        self._vf = None
        fc = img[mesh.faces]
        self.face_centroids = fc.mean(axis=1)
        self._corner_cost = self.segment_cost(fc, self.face_centroids[:, None])

    def segment_cost(self, a, b):
        """Image length times (1 + sigma_0) at the midpoint; inf if infeasible."""
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)
        s = static_weight_field(0.5 * (a + b), self.field)
        return np.abs(b - a) * (1.0 + s)

    def vertex_field(self, v):
        v = int(v)
        if self._all is not None:
            return self._all[v]
        if v not in self._cache:
            d, pred = csgraph.dijkstra(self.G, directed=False, indices=v, return_predecessors=True)
            self._cache[v] = d
            self._pred[v] = pred
        return self._cache[v]

    def all_pairs(self):
        """Precompute every vertex field (n^2 floats) for fast repeated queries."""
        if self._all is None:
            self._all = csgraph.dijkstra(self.G, directed=False)
        return self._all

    def _predecessors(self, v):
        if v not in self._pred:
            _, pred = csgraph.dijkstra(self.G, directed=False, indices=int(v), return_predecessors=True)
            self._pred[v] = pred
        return self._pred[v]

    def _vertex_faces(self):
        if self._vf is None:
            mesh = self.mm.source
            nf = mesh.n_faces
            rows = mesh.faces.ravel()
            cols = np.repeat(np.arange(nf), 3)
            self._vf = sparse.csr_matrix((np.ones(3 * nf), (rows, cols)), shape=(mesh.n_vertices, nf))
        return self._vf

    def _neighbourhood_faces(self, face):
        corners = self.mm.source.faces[face]
        return np.unique(self._vertex_faces()[corners].indices)

    def visible(self, a, b, samples=5):
        """True where the image segments a-b stay inside the triangulation."""
        a = np.atleast_1d(np.asarray(a, dtype=complex))
        b = np.atleast_1d(np.asarray(b, dtype=complex))
        t = np.linspace(0.0, 1.0, samples + 2)[1:-1]
        pts = a[:, None] * (1 - t) + b[:, None] * t
        f, _ = self.mm.locator.locate_many(pts.ravel())
        return np.all(f.reshape(pts.shape) >= 0, axis=1)

    def _star(self, v):
        """Faces around v and the vertices of the faces around those."""
        vf = self._vertex_faces()
        star = vf[v].indices
        ring1 = np.unique(self.mm.source.faces[star])
        outer = np.unique(vf[ring1].indices)
        return star, ring1, outer

    def _probes(self, star, ring1):
        img = self.mm.image
        return np.concatenate([img[ring1], self.face_centroids[star]])

    def vertex_links(self, v):
        """Link targets for points in the star of v.

        A target is a vertex of the surrounding faces that every corner and
        centroid of the star can see, so the straight link is valid from
        anywhere in the star.  Cached per vertex.
        """
        v = int(v)
        hit = self._links.get(v)
        if hit is None:
            star, ring1, outer = self._star(v)
            faces = self.mm.source.faces
            cand = np.setdiff1d(np.unique(faces[outer]), ring1)
            ok = np.ones(len(cand), dtype=bool)
            img = self.mm.image
            for z in self._probes(star, ring1):
                if not ok.any():
                    break
                ok &= self.visible(np.full(len(cand), z), img[cand])
            hit = np.concatenate([ring1, cand[ok]])
            self._links[v] = hit
        return hit

    def vertex_near(self, v):
        """Faces near v whose centroids every point of the star can see."""
        v = int(v)
        hit = self._near.get(v)
        if hit is None:
            star, ring1, outer = self._star(v)
            c = self.face_centroids[outer]
            ok = np.ones(len(outer), dtype=bool)
            for z in self._probes(star, ring1):
                ok &= self.visible(np.full(len(outer), z), c)
            hit = np.union1d(outer[ok], star)
            self._near[v] = hit
        return hit

    def _terms(self, p: SurfacePoint, img_p=None):
        pi = p.image(self.mm) if img_p is None else img_p
        corners = self.mm.source.faces[p.face]
        for k in range(3):
            if p.bary[k] > 1e-15:
                vids = self.vertex_links(corners[k])
                cost = self.segment_cost(np.full(len(vids), pi), self.mm.image[vids])
                yield float(p.bary[k]), int(corners[k]), vids, cost, pi

    def links(self, p: SurfacePoint, img_p=None):
        """All vertices a query point may link to, with their link costs."""
        vids = np.unique(np.concatenate([t[2] for t in self._terms(p, img_p)]))
        pi = p.image(self.mm) if img_p is None else img_p
        return vids, self.segment_cost(np.full(len(vids), pi), self.mm.image[vids])

    def point_field(self, p: SurfacePoint, img_p=None, targets=None):
        """Length-metric distance from a surface point to vertices.

        Each corner of the point's face contributes the best route through
        its own link set; the routes are blended with the barycentric
        weights so the field is continuous as the point crosses edges.
        """
        out = 0.0
        for w, _, vids, cost, _ in self._terms(p, img_p):
            if self._all is not None:
                M = self._all[vids] if targets is None else self._all[np.ix_(vids, targets)]
            else:
                M = np.stack([self.vertex_field(v) for v in vids])
                if targets is not None:
                    M = M[:, targets]
            out = out + w * np.min(M + cost[:, None], axis=0)
        return out

    def centroid_distances(self, vert_dist, face_ids=None):
        """Distance to face centroids through the cheapest corner."""
        faces = self.mm.source.faces
        if face_ids is None:
            return np.min(vert_dist[faces] + self._corner_cost, axis=1)
        return np.min(vert_dist[faces[face_ids]] + self._corner_cost[face_ids], axis=1)

    def _sector_prep(self, face_ids):
        # the same sector is queried many times per step (cost, stencil, step)
        key = face_ids.tobytes()
        hit = self._sectors.get(key)
        if hit is None:
            if len(self._sectors) > 64:
                self._sectors.clear()
            Vs, inv = np.unique(self.mm.source.faces[face_ids], return_inverse=True)
            hit = (Vs, inv.reshape(-1, 3), self._corner_cost[face_ids])
            self._sectors[key] = hit
        return hit

    def face_distances(self, p: SurfacePoint, face_ids, img_p=None):
        """Blended distance from a point to the centroids of ``face_ids`` (sorted)."""
        face_ids = np.asarray(face_ids)
        faces = self.mm.source.faces
        pi = p.image(self.mm) if img_p is None else img_p
        Vs, inv, cc = self._sector_prep(face_ids)
        corners = faces[p.face]
        ks = [k for k in range(3) if p.bary[k] > 1e-15]
        groups = [self.vertex_links(corners[k]) for k in ks]
        starts = np.cumsum([0] + [len(g) for g in groups[:-1]])
        allv = np.concatenate(groups)
        cost = self.segment_cost(np.full(len(allv), pi), self.mm.image[allv])
        M = self.all_pairs()[np.ix_(allv, Vs)] + cost[:, None]
        fields = np.minimum.reduceat(M, starts, axis=0)
        d = np.min(fields[:, inv] + cc[None], axis=2)
        for row, k in enumerate(ks):
            near = self.vertex_near(corners[k])
            pos = np.minimum(np.searchsorted(face_ids, near), len(face_ids) - 1)
            pos = pos[face_ids[pos] == near]
            if len(pos):
                direct = self.segment_cost(np.full(len(pos), pi), self.face_centroids[face_ids[pos]])
                d[row, pos] = np.minimum(d[row, pos], direct)
        return p.bary[ks] @ d

    def distance(self, p: SurfacePoint, q: SurfacePoint, witness=False):
        # evaluate in a canonical order so that d(p, q) == d(q, p) bit for bit
        if (q.face, tuple(q.bary)) < (p.face, tuple(p.bary)):
            out = self.distance(q, p, witness)
            return (out[0], out[1][::-1]) if witness else out
        pi, qi = p.image(self.mm), q.image(self.mm)
        if p.face == q.face and np.allclose(p.bary, q.bary):
            return (0.0, [pi]) if witness else 0.0
        best, arg = np.inf, None
        if p.face == q.face:
            best = float(self.segment_cost(pi, qi))
            arg = "direct"
        if q.face in set(self._neighbourhood_faces(p.face).tolist()) and self.visible(pi, qi)[0]:
            c = float(self.segment_cost(pi, qi))
            if c < best:
                best, arg = c, "direct"
        pv, lp = self.links(p, pi)
        qv, lq = self.links(q, qi)
        for a, ca in zip(pv, lp):
            d = self.vertex_field(a)[qv] + lq
            j = int(np.argmin(d))
            if ca + d[j] < best:
                best, arg = float(ca + d[j]), (int(a), int(qv[j]))
        if not np.isfinite(best):
            raise NoPath("points are not connected in the feasible set")
        if not witness:
            return best
        if arg == "direct":
            return best, [pi, qi]
        a, b = arg
        pred = self._predecessors(a)
        chain = [b]
        while chain[-1] != a:
            chain.append(int(pred[chain[-1]]))
        poly = [pi] + [complex(self.mm.image[v]) for v in chain[::-1]] + [qi]
        return best, poly


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return ((b - a) * np.conj(c - a)).imag

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def length_distance(p, q, graph: LengthGraph, witness=False):
    return graph.distance(p, q, witness)


def locate_surface_point(mm, q_img):
    from .conformal import inverse_map

    f, b = inverse_map(mm, q_img)
    return SurfacePoint(int(f), np.asarray(b))
