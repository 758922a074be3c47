"""Triangle meshes of poriferous surfaces.

A :class:`TriMesh` is a genus-0 triangulated surface in R^3 with one outer
boundary loop and ``n`` obstacle loops, so ``V - E + F == 1 - n``.  Loops
are stored with the surface interior on their left, i.e. the outer loop
runs counter-clockwise and obstacle loops run clockwise when viewed from
the side the face normals point to.

Mesh file grammar (``.pmesh``, whitespace separated, ``#`` starts a comment)::

    pmesh 1
    vertices <V>
    <x> <y> <z>                 # V lines
    faces <F>
    <i> <j> <k>                 # F lines, 0-based, counter-clockwise
    loops <L>
    outer <m> <v1> ... <vm>
    obstacle <k> <m> <v1> ... <vm>
    scalars <name> <V>          # optional, repeatable
    <value>                     # V lines

Loop vertex lists are written once (the closing vertex is not repeated).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import Delaunay

from .errors import DegenerateFace, InvalidMesh, SolverFailure

OUTER = "OUTER"


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    outer_loop: np.ndarray
    obstacle_loops: list = field(default_factory=list)
    scalars: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 2 and self.vertices.shape[1] == 2:
            self.vertices = np.column_stack([self.vertices, np.zeros(len(self.vertices))])
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.outer_loop = np.asarray(self.outer_loop, dtype=np.int64)
        self.obstacle_loops = [np.asarray(lp, dtype=np.int64) for lp in self.obstacle_loops]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_obstacles(self):
        return len(self.obstacle_loops)

    @property
    def xy(self):
        """Planar projection of the vertices as complex numbers."""
        return self.vertices[:, 0] + 1j * self.vertices[:, 1]

    def edges(self):
        return unique_edges(self.faces)

    def euler_characteristic(self):
        return euler_characteristic(self.faces)

    def boundary_vertices(self):
        return np.unique(np.concatenate([self.outer_loop] + list(self.obstacle_loops)))

    def face_areas(self):
        return face_areas(self.vertices, self.faces)

    def face_centroids(self):
        return self.vertices[self.faces].mean(axis=1)

    def validate(self):
        validate_mesh(self)
        return self


def unique_edges(faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def euler_characteristic(faces):
    faces = np.asarray(faces)
    if len(faces) == 0:
        return 0
    nv = len(np.unique(faces))
    return nv - len(unique_edges(faces)) + len(faces)


def face_areas(vertices, faces):
    p = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def boundary_halfedges(faces):
    """Directed boundary half-edges (u, v) with the face on their left."""
    he = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    count = defaultdict(int)
    for u, v in he:
        count[(min(u, v), max(u, v))] += 1
    return [(int(u), int(v)) for u, v in he if count[(min(u, v), max(u, v))] == 1]


def boundary_loops(faces):
    """Chain boundary half-edges into closed loops.

    Raises :class:`InvalidMesh` at pinch vertices (more than one outgoing
    boundary half-edge).
    """
    nxt = {}
    for u, v in boundary_halfedges(faces):
        if u in nxt:
            raise InvalidMesh(f"non-manifold boundary at vertex {u}")
        nxt[u] = v
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in seen or cur not in nxt:
                raise InvalidMesh("boundary does not close into loops")
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(np.array(loop, dtype=np.int64))
    return loops


def signed_loop_area(xy, loop):
    z = xy[loop]
    return 0.5 * float(np.sum((z.real * np.roll(z.imag, -1)) - (np.roll(z.real, -1) * z.imag)))


def validate_mesh(mesh: TriMesh):
    f = mesh.faces
    if f.ndim != 2 or f.shape[1] != 3:
        raise InvalidMesh("faces must be index triples")
    if f.min() < 0 or f.max() >= mesh.n_vertices:
        raise InvalidMesh("face index out of range")
    if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
        raise InvalidMesh("degenerate face")
    he = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    if len(np.unique(he, axis=0)) != len(he):
        raise InvalidMesh("inconsistent orientation or non-manifold edge")
    und = np.sort(he, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    if counts.max() > 2:
        raise InvalidMesh("edge shared by more than two faces")
    if len(np.unique(f)) != mesh.n_vertices:
        raise InvalidMesh("unreferenced vertices")
    adj = face_adjacency(f)
    ncomp, _ = csgraph.connected_components(adj, directed=False)
    if ncomp != 1:
        raise InvalidMesh("mesh is not connected")
    chi = euler_characteristic(f)
    n = mesh.n_obstacles
    if chi != 1 - n:
        raise InvalidMesh(f"Euler characteristic {chi} != 1 - n = {1 - n}")
    labelled = {}
    for name, lp in [(OUTER, mesh.outer_loop)] + [(k, lp) for k, lp in enumerate(mesh.obstacle_loops)]:
        for u, v in zip(lp, np.roll(lp, -1)):
            key = (int(u), int(v))
            if key in labelled:
                raise InvalidMesh("boundary edge listed in two loops")
            labelled[key] = name
    bhe = set(boundary_halfedges(f))
    if set(labelled) != bhe:
        raise InvalidMesh("labelled loops do not match the mesh boundary")
    return True


def face_adjacency(faces):
    """Sparse face-face adjacency through shared edges."""
    nf = len(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    fid = np.tile(np.arange(nf), 3)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e, fid = e[order], fid[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    a, b = fid[:-1][same], fid[1:][same]
    data = np.ones(2 * len(a))
    return sparse.csr_matrix((data, (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(nf, nf))


def edge_faces(faces):
    """Map sorted edge tuple -> list of incident face ids."""
    out = defaultdict(list)
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            out[(min(u, v), max(u, v))].append(fi)
    return out


def vertex_adjacency(faces, n):
    e = unique_edges(faces)
    data = np.ones(2 * len(e))
    return sparse.csr_matrix(
        (data, (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n)
    )


# ---------------------------------------------------------------- local frames


def face_frames(vertices, faces):
    """Orthonormal tangent frame per face and complex local coordinates.

    Returns ``(e1, e2, normal, local)`` where ``local[f]`` holds the three
    corners of face f in its own frame (first corner at the origin, first
    edge along +x).
    """
    p = vertices[faces]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    n = np.cross(d1, d2)
    nn = np.linalg.norm(n, axis=1)
    l1 = np.linalg.norm(d1, axis=1)
    if np.any(nn <= 1e-14 * np.maximum(l1, 1e-300) ** 2) or np.any(l1 == 0):
        raise DegenerateFace("zero-area face")
    n = n / nn[:, None]
    e1 = d1 / l1[:, None]
    e2 = np.cross(n, e1)
    local = np.zeros((len(faces), 3), dtype=complex)
    local[:, 1] = l1
    local[:, 2] = np.einsum("ij,ij->i", d2, e1) + 1j * np.einsum("ij,ij->i", d2, e2)
    return e1, e2, n, local


# ----------------------------------------------------------------- Laplacian


def cotangent_weights(vertices, faces, clamp=True):
    """Symmetric sparse matrix of cotangent edge weights.

    ``w_ij = (cot a + cot b) / 2`` over the angles opposite edge ij; negative
    totals are clamped to zero, which keeps harmonic maps free of foldovers
    on obtuse triangulations.
    """
    vertices = np.asarray(vertices)
    if np.iscomplexobj(vertices):
        vertices = np.column_stack([vertices.real, vertices.imag, np.zeros(len(vertices))])
    n = len(vertices)
    p = vertices[faces]
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = (k + 1) % 3, (k + 2) % 3, k
        u = p[:, i] - p[:, o]
        v = p[:, j] - p[:, o]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        dot = np.einsum("ij,ij->i", u, v)
        cot = dot / np.maximum(cross, 1e-300)
        rows.append(faces[:, i])
        cols.append(faces[:, j])
        vals.append(0.5 * cot)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    W = sparse.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    W = W + W.T
    if clamp:
        W.data = np.maximum(W.data, 0.0)
        W.eliminate_zeros()
    return W


def laplacian(W):
    d = np.asarray(W.sum(axis=1)).ravel()
    return (sparse.diags(d) - W).tocsr()


def dirichlet_solve(W, fixed_idx, fixed_val, n=None):
    """Harmonic extension: solve L x = 0 on free vertices, x = fixed_val on fixed.

    ``fixed_val`` may be real or complex (components solved together).
    """
    n = W.shape[0] if n is None else n
    fixed_idx = np.asarray(fixed_idx, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), fixed_idx)
    fixed_val = np.asarray(fixed_val)
    out = np.zeros(n, dtype=fixed_val.dtype if np.iscomplexobj(fixed_val) else float)
    out[fixed_idx] = fixed_val
    if free.size == 0:
        return out
    L = laplacian(W)
    A = L[free][:, free].tocsc()
    rhs = -(L[free][:, fixed_idx] @ fixed_val)
    try:
        lu = sparse.linalg.splu(A)
    except RuntimeError as exc:
        raise SolverFailure(f"singular Laplace system: {exc}") from exc
    if np.iscomplexobj(rhs):
        sol = lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    else:
        sol = lu.solve(np.ascontiguousarray(rhs))
    if not np.all(np.isfinite(sol)):
        raise SolverFailure("non-finite harmonic solution")
    out[free] = sol
    return out


# -------------------------------------------------------------- submeshes


@dataclass
class SubMesh:
    """A face subset re-indexed to local vertex ids."""

    faces: np.ndarray  # local indices
    vertex_ids: np.ndarray  # local -> global
    face_ids: np.ndarray  # local -> global

    def local_of(self, global_ids):
        lookup = {int(g): i for i, g in enumerate(self.vertex_ids)}
        return np.array([lookup[int(g)] for g in global_ids], dtype=np.int64)


def submesh(faces, face_ids):
    face_ids = np.asarray(face_ids, dtype=np.int64)
    f = faces[face_ids]
    vids, inv = np.unique(f, return_inverse=True)
    return SubMesh(inv.reshape(-1, 3), vids, face_ids)


# ---------------------------------------------------------------------- I/O


def save_mesh(mesh: TriMesh, path):
    path = Path(path)
    lines = ["pmesh 1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines.append(f"faces {mesh.n_faces}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.faces]
    lines.append(f"loops {1 + mesh.n_obstacles}")
    lines.append(f"outer {len(mesh.outer_loop)} " + " ".join(map(str, mesh.outer_loop)))
    for k, lp in enumerate(mesh.obstacle_loops):
        lines.append(f"obstacle {k} {len(lp)} " + " ".join(map(str, lp)))
    for name, vals in mesh.scalars.items():
        lines.append(f"scalars {name} {len(vals)}")
        lines += [f"{v:.17g}" for v in vals]
    path.write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    """Parse a ``.pmesh`` file; the result is validated (Euler check included)."""
    toks = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        toks.extend(line.split())
    it = iter(toks)

    def take(n=1, conv=str):
        try:
            return [conv(next(it)) for _ in range(n)]
        except StopIteration:
            raise InvalidMesh("truncated mesh file") from None

    head = take(2)
    if head != ["pmesh", "1"]:
        raise InvalidMesh("missing 'pmesh 1' header")
    vertices = faces = None
    outer = None
    obstacles = {}
    scalars = {}
    while True:
        try:
            key = next(it)
        except StopIteration:
            break
        if key == "vertices":
            (nv,) = take(1, int)
            vertices = np.array(take(3 * nv, float)).reshape(nv, 3)
        elif key == "faces":
            (nf,) = take(1, int)
            faces = np.array(take(3 * nf, int)).reshape(nf, 3)
        elif key == "loops":
            take(1, int)
        elif key == "outer":
            (m,) = take(1, int)
            outer = np.array(take(m, int))
        elif key == "obstacle":
            k, m = take(2, int)
            obstacles[k] = np.array(take(m, int))
        elif key == "scalars":
            (name,) = take(1)
            (m,) = take(1, int)
            scalars[name] = np.array(take(m, float))
        else:
            raise InvalidMesh(f"unknown section {key!r}")
    if vertices is None or faces is None or outer is None:
        raise InvalidMesh("mesh file needs vertices, faces and an outer loop")
    if sorted(obstacles) != list(range(len(obstacles))):
        raise InvalidMesh("obstacle loops must be numbered 0..n-1")
    mesh = TriMesh(vertices, faces, outer, [obstacles[k] for k in range(len(obstacles))], scalars)
    return mesh.validate()


# ------------------------------------------------------------ mesh builders


@dataclass(frozen=True)
class HoleSpec:
    """Planar hole outline: an ellipse, optionally with a sinusoidal wobble."""

    center: complex
    a: float
    b: float = None
    angle: float = 0.0
    wobble: float = 0.0
    lobes: int = 0

    def outline(self, h):
        b = self.a if self.b is None else self.b
        t = np.linspace(0, 2 * math.pi, 4000, endpoint=False)
        rad = 1.0 + self.wobble * np.cos(self.lobes * t)
        z = (self.a * np.cos(t) + 1j * b * np.sin(t)) * rad
        z = self.center + z * np.exp(1j * self.angle)
        return _resample_closed(z, h)


def _resample_closed(z, h):
    seg = np.abs(np.diff(np.append(z, z[0])))
    s = np.concatenate([[0], np.cumsum(seg)])
    total = s[-1]
    m = max(8, int(round(total / h)))
    t = np.arange(m) * total / m
    zz = np.append(z, z[0])
    return np.interp(t, s, zz.real) + 1j * np.interp(t, s, zz.imag)


def _inside_polygon(q, poly):
    # even-odd rule, vectorised over q
    x, y = q.real[:, None], q.imag[:, None]
    px, py = poly.real[None, :], poly.imag[None, :]
    qx, qy = np.roll(poly.real, -1)[None, :], np.roll(poly.imag, -1)[None, :]
    cond = (py > y) != (qy > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = px + (y - py) * (qx - px) / (qy - py)
    return np.sum(cond & (x < xint), axis=1) % 2 == 1


def _dist_to_polyline(q, poly):
    a = poly[None, :]
    b = np.roll(poly, -1)[None, :]
    d = b - a
    t = np.clip(((q[:, None] - a) * np.conj(d)).real / np.maximum(np.abs(d) ** 2, 1e-300), 0, 1)
    return np.min(np.abs(q[:, None] - (a + t * d)), axis=1)


def make_poriferous_mesh(holes, h=0.05, radius=1.0, height=None, seed=0, jitter=0.15):
    """Triangulate a disk of given radius minus planar holes, then lift it.

    ``height(x, y)`` (vectorised) supplies the z coordinate; default flat.
    Deterministic for a fixed ``seed``.
    """
    rng = np.random.default_rng(seed)
    outer = radius * np.exp(1j * np.linspace(0, 2 * math.pi, max(16, int(round(2 * math.pi * radius / h))), endpoint=False))
    hole_pts = [hs.outline(h) for hs in holes]
    # interior hexagonal lattice
    ny = int(2 * radius / (h * math.sqrt(3) / 2)) + 3
    nx = int(2 * radius / h) + 3
    ys = (np.arange(ny) - ny // 2) * h * math.sqrt(3) / 2
    xs = (np.arange(nx) - nx // 2) * h
    X, Y = np.meshgrid(xs, ys)
    X = X + 0.5 * h * (np.arange(ny)[:, None] % 2)
    q = (X + 1j * Y).ravel()
    q = q + jitter * h * (rng.standard_normal(q.shape) + 1j * rng.standard_normal(q.shape))
    keep = np.abs(q) < radius - 0.7 * h
    q = q[keep]
    for hp in hole_pts:
        q = q[~_inside_polygon(q, hp)]
        q = q[_dist_to_polyline(q, hp) > 0.7 * h]
    pts = np.concatenate([outer] + hole_pts + [q])
    tri = Delaunay(np.column_stack([pts.real, pts.imag]))
    faces = tri.simplices.copy()
    cen = pts[faces].mean(axis=1)
    ok = np.abs(cen) < radius
    for hp in hole_pts:
        ok &= ~_inside_polygon(cen, hp)
    faces = faces[ok]
    # counter-clockwise orientation
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    cr = ((b - a) * np.conj(c - a)).imag
    flip = cr > 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    used = np.unique(faces)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    faces = remap[faces]
    pts = pts[used]
    loops = boundary_loops(faces)
    if len(loops) != 1 + len(holes):
        raise InvalidMesh(f"expected {1 + len(holes)} boundary loops, found {len(loops)}")
    areas = [signed_loop_area(pts, lp) for lp in loops]
    io = int(np.argmax(areas))
    outer_loop = loops[io]
    rest = [lp for i, lp in enumerate(loops) if i != io]
    # order obstacle loops like the hole specs
    ordered = []
    for hs in holes:
        k = int(np.argmin([abs(pts[lp].mean() - hs.center) for lp in rest]))
        ordered.append(rest.pop(k))
    z = np.zeros(len(pts)) if height is None else height(pts.real, pts.imag)
    mesh = TriMesh(np.column_stack([pts.real, pts.imag, z]), faces, outer_loop, ordered)
    return mesh.validate()


def gentle_hills(x, y):
    """Default lifting used by the bundled test surfaces."""
    return 0.18 * np.exp(-2.0 * ((x - 0.2) ** 2 + (y + 0.1) ** 2)) + 0.05 * np.sin(2.5 * x) * np.cos(2.0 * y)


def bundled_mesh(name):
    """Build one of the named test surfaces ('disk', 'hole1', 'holes3', 'holes6')."""
    if name == "disk":
        return make_poriferous_mesh([], h=0.07)
    if name == "hole1":
        return make_poriferous_mesh([HoleSpec(0j, 0.3)], h=0.06)
    if name == "holes3":
        holes = [
            HoleSpec(0.5 + 0.1j, 0.12),
            HoleSpec(-0.3 + 0.45j, 0.16, 0.08, angle=0.6),
            HoleSpec(-0.25 - 0.5j, 0.11, wobble=0.15, lobes=3),
        ]
        return make_poriferous_mesh(holes, h=0.05, height=gentle_hills, seed=3)
    if name == "holes6":
        holes = []
        for k in range(6):
            ang = 2 * math.pi * k / 6 + 0.3
            rad = 0.58 if k % 2 == 0 else 0.5
            holes.append(HoleSpec(rad * np.exp(1j * ang), 0.09 + 0.01 * (k % 3), 0.08 + 0.01 * (k % 2), angle=0.4 * k))
        return make_poriferous_mesh(holes, h=0.045, height=gentle_hills, seed=6)
    raise KeyError(name)


def annulus_grid_mesh(r_in=0.3, r_out=1.0, n_rad=12, n_ang=64, center=0j):
    """Structured flat annulus, rotationally symmetric by n_ang/2 steps."""
    rs = np.geomspace(r_in, r_out, n_rad + 1) if r_in > 0 else np.linspace(r_in, r_out, n_rad + 1)
    ang = 2 * math.pi * np.arange(n_ang) / n_ang
    pts = (rs[:, None] * np.exp(1j * ang[None, :])).ravel() + center
    idx = np.arange((n_rad + 1) * n_ang).reshape(n_rad + 1, n_ang)
    faces = []
    for i in range(n_rad):
        for j in range(n_ang):
            a, b = idx[i, j], idx[i, (j + 1) % n_ang]
            c, d = idx[i + 1, j], idx[i + 1, (j + 1) % n_ang]
            faces += [(a, d, b), (a, c, d)]
    faces = np.array(faces)
    outer = idx[-1]
    inner = idx[0][::-1]
    return TriMesh(np.column_stack([pts.real, pts.imag, np.zeros(len(pts))]), faces, outer, [inner]).validate()


def disk_grid_mesh(n_rad=12, n_ang=48, radius=1.0):
    """Flat disk: a center vertex plus concentric rings, uniform boundary."""
    pts = [0j]
    rings = []
    for i in range(1, n_rad + 1):
        m = max(6, int(round(n_ang * i / n_rad)))
        r = radius * i / n_rad
        start = len(pts)
        pts.extend(r * np.exp(1j * (2 * math.pi * np.arange(m) / m + 0.5 * (i % 2) * 2 * math.pi / m)))
        rings.append(np.arange(start, start + m))
    pts = np.array(pts)
    tri = Delaunay(np.column_stack([pts.real, pts.imag]))
    faces = tri.simplices.copy()
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    flip = ((b - a) * np.conj(c - a)).imag > 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriMesh(np.column_stack([pts.real, pts.imag, np.zeros(len(pts))]), faces, rings[-1], []).validate()
