"""Distributed conformal flattening of a poriferous surface onto a circle domain.

Stages, in order: per-cell disk maps, local Mobius welding around each
obstacle, per-region annulus maps, global similarity welding, boundary
rectification, circle-constrained conformal refinement, Mobius inflation
and a final cotangent-harmonic extension.  Each stage is a pure function
of its inputs so regions can be processed independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as sla

from .errors import (
    ChainMisclosure,
    DegenerateFace,
    InadmissiblePartition,
    MapFoldover,
    ModulusDivergence,
    OutOfDomain,
    ProjectionSingularity,
    SolverFailure,
    StageError,
    WeldMisfit,
    WeldUnderdetermined,
)
from .geometry import Circle, MobiusParams, PlanarLocator, SimilarityParams, fit_circle, mobius_apply, similarity_apply
from .mesh import (
    TriMesh,
    boundary_loops,
    cotangent_weights,
    dirichlet_solve,
    euler_characteristic,
    face_frames,
    laplacian,
    submesh,
    vertex_adjacency,
)

FOLD_TOL = 0.0


@dataclass
class PatchMap:
    """Disk map of one cell; ``vertex_ids`` are global mesh indices."""

    patch_id: int
    vertex_ids: np.ndarray
    image: np.ndarray
    boundary: np.ndarray  # ordered global ids of the boundary loop
    boundary_angles: np.ndarray

    def lookup(self):
        return {int(g): i for i, g in enumerate(self.vertex_ids)}

    def at(self, global_ids):
        lk = self.lookup()
        return self.image[[lk[int(g)] for g in global_ids]]


@dataclass
class AnnulusMap:
    region_id: int
    vertex_ids: np.ndarray
    image: np.ndarray
    modulus: float
    inner: np.ndarray = None
    outer: np.ndarray = None
    flux: float = None

    def at(self, global_ids):
        lk = {int(g): i for i, g in enumerate(self.vertex_ids)}
        return self.image[[lk[int(g)] for g in global_ids]]


@dataclass
class WeldResult:
    params: object
    energy: float


@dataclass
class MappedMesh:
    source: TriMesh
    image: np.ndarray
    circles: list
    jacobians: np.ndarray = None
    conformal_factor: np.ndarray = None
    beltrami: np.ndarray = None
    report: dict = field(default_factory=dict)
    _locator: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.jacobians is None:
            self.jacobians, self.conformal_factor, self.beltrami = jacobian_field(self.source, self.image)

    @property
    def locator(self):
        if self._locator is None:
            self._locator = PlanarLocator(self.image, self.source.faces)
        return self._locator

    def vertex_lambda(self):
        """Per-vertex conformal factor, area-weighted over incident faces."""
        A = self.source.face_areas()
        num = np.zeros(self.source.n_vertices)
        den = np.zeros(self.source.n_vertices)
        for k in range(3):
            np.add.at(num, self.source.faces[:, k], A * self.conformal_factor)
            np.add.at(den, self.source.faces[:, k], A)
        return num / den

    def in_domain(self, q, margin=0.0):
        q = np.asarray(q, dtype=complex)
        ok = np.abs(q) < 1.0 - margin
        for c in self.circles:
            ok &= np.abs(q - c.center) > c.radius + margin
        return ok


# ------------------------------------------------------------ small helpers


def signed_areas(points, faces):
    a, b, c = points[faces[:, 0]], points[faces[:, 1]], points[faces[:, 2]]
    return 0.5 * ((b - a).real * (c - a).imag - (b - a).imag * (c - a).real)


def loop_arclength(vertices, loop):
    p = vertices[loop]
    seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    return s, float(seg.sum())


def _edge_lengths(vertices, edges):
    return np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)


def interface_weights(vertices, edges):
    """Vertices of an edge list and their ds weights (half incident length)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    ids = np.unique(edges)
    w = np.zeros(len(ids))
    pos = {int(v): i for i, v in enumerate(ids)}
    for (u, v), L in zip(edges, _edge_lengths(vertices, edges)):
        w[pos[int(u)]] += 0.5 * L
        w[pos[int(v)]] += 0.5 * L
    return ids, w


# ------------------------------------------------------------------ disk map


def disk_map(mesh: TriMesh, face_ids, patch_id=0):
    """Harmonic map of a disk-like cell onto the unit disk."""
    sm = submesh(mesh.faces, face_ids)
    if euler_characteristic(sm.faces) != 1:
        raise InadmissiblePartition(f"patch {patch_id} is not a topological disk")
    loops = boundary_loops(sm.faces)
    if len(loops) != 1:
        raise InadmissiblePartition(f"patch {patch_id} has {len(loops)} boundary loops")
    loop = loops[0]
    start = int(np.argmin(sm.vertex_ids[loop]))
    loop = np.roll(loop, -start)
    verts = mesh.vertices[sm.vertex_ids]
    s, total = loop_arclength(verts, loop)
    ang = 2 * math.pi * s / total
    bvals = np.exp(1j * ang)
    n = len(sm.vertex_ids)
    if n == len(loop):
        img = np.zeros(n, dtype=complex)
        img[loop] = bvals
    else:
        W = cotangent_weights(verts, sm.faces)
        img = dirichlet_solve(W, loop, bvals)
    sa = signed_areas(img, sm.faces)
    if np.any(sa <= FOLD_TOL):
        raise MapFoldover(f"patch {patch_id}: {int(np.sum(sa <= 0))} flipped faces")
    return PatchMap(patch_id, sm.vertex_ids, img, sm.vertex_ids[loop], ang)


# ---------------------------------------------------------------- local weld


def _mobius_from_free(x):
    b = complex(x[1], x[2])
    a = b / math.sqrt(1.0 + abs(b) ** 2)
    return MobiusParams(float(x[0]) % (2 * math.pi), a)


def _free_from_mobius(m):
    a = m.a
    b = a / math.sqrt(max(1.0 - abs(a) ** 2, 1e-300))
    return np.array([m.phi, b.real, b.imag])


def weld_energy(target, source, weights, m):
    d = target - mobius_apply(source, m)
    return float(np.sum(weights * np.abs(d) ** 2))


def _min_norm_single(t, w):
    """Automorphism sending w to t with the smallest |a|."""
    def a_of(phi):
        c = np.exp(-1j * phi) * t
        # a - c w conj(a) = w - c  (real-linear in a)
        M = np.array([[1 - (c * w).real, -(c * w).imag], [-(c * w).imag, 1 + (c * w).real]])
        r = w - c
        try:
            x = np.linalg.solve(M, [r.real, r.imag])
        except np.linalg.LinAlgError:
            return None
        return complex(x[0], x[1])

    best = None
    grid = np.linspace(0, 2 * math.pi, 721)
    vals = []
    for phi in grid:
        a = a_of(phi)
        vals.append(abs(a) if a is not None else np.inf)
    i = int(np.argmin(vals))
    res = optimize.minimize_scalar(
        lambda p: abs(a_of(p)) if a_of(p) is not None else np.inf,
        bracket=(grid[max(i - 1, 0)], grid[i], grid[min(i + 1, len(grid) - 1)]),
    )
    for phi in (res.x, grid[i]):
        a = a_of(phi)
        if a is not None and abs(a) < 1 and (best is None or abs(a) < abs(best.a)):
            best = MobiusParams(float(phi) % (2 * math.pi), a)
    if best is None:
        raise WeldMisfit("no automorphism maps the single interface point")
    return best


def weld_points(target, source, weights=None, threshold=np.inf, starts=8):
    """Best automorphism Theta with target ~ Theta(source) in weighted l2."""
    target = np.asarray(target, dtype=complex)
    source = np.asarray(source, dtype=complex)
    weights = np.ones(len(target)) if weights is None else np.asarray(weights, float)
    if len(target) == 0:
        raise WeldMisfit("empty interface")
    if len(target) == 1:
        m = _min_norm_single(target[0], source[0])
        return WeldResult(m, weld_energy(target, source, weights, m))
    sw = np.sqrt(weights)

    def resid(x):
        m = _mobius_from_free(x)
        d = sw * (target - mobius_apply(source, m))
        return np.concatenate([d.real, d.imag])

    best = None
    for k in range(starts):
        x0 = np.array([2 * math.pi * k / starts, 0.0, 0.0])
        try:
            sol = optimize.least_squares(resid, x0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
        except Exception:  # pragma: no cover - optimizer internals
            continue
        e = float(np.sum(sol.fun**2))
        if best is None or e < best[1] - 1e-15:
            best = (sol.x, e)
    m = _mobius_from_free(best[0])
    res = WeldResult(m, weld_energy(target, source, weights, m))
    if not res.energy <= threshold:
        raise WeldMisfit(f"weld residual {res.energy:.3e} above threshold {threshold:.3e}")
    return res


def local_weld(hu: PatchMap, hv: PatchMap, interface, vertices, threshold=np.inf):
    """Automorphism Theta* minimizing sum ds |h_u - Theta(h_v)|^2 on the interface."""
    ids, w = interface_weights(vertices, interface)
    return weld_points(hu.at(ids), hv.at(ids), w, threshold)


# ---------------------------------------------------------- compose unified


@dataclass
class UnifiedImage:
    """Welded chain of patch images around one obstacle."""

    vertex_ids: np.ndarray
    image: np.ndarray
    seam_gaps: dict
    closure_residual: float
    transforms: list


def chain_order(cells, interfaces):
    """Order cell ids into a closed chain using the interface map."""
    cells = [int(c) for c in cells]
    if len(cells) == 1:
        return cells
    adj = {c: [int(d) for d in interfaces.get(c, {}) if int(d) in cells] for c in cells}
    if len(cells) == 2:
        if cells[1] not in adj[cells[0]]:
            raise ChainMisclosure("the two cells share no interface")
        return sorted(cells)
    for c in cells:
        if len(adj[c]) != 2:
            raise ChainMisclosure(f"cell {c} does not have exactly two chain neighbours")
    order = [min(cells)]
    prev = None
    while True:
        cur = order[-1]
        nxt = [d for d in sorted(adj[cur]) if d != prev]
        nxt = nxt[0]
        if nxt == order[0]:
            break
        if nxt in order:
            raise ChainMisclosure("cells do not form a single closed chain")
        prev = cur
        order.append(nxt)
    if len(order) != len(cells):
        raise ChainMisclosure("cells do not form a single closed chain")
    return order


def compose_unified(patches, welds, vertices=None, faces=None, interfaces=None, threshold=np.inf):
    """Apply Theta_{1->l} o h_l to every patch and average seam vertices.

    ``welds[l]`` (l >= 1) maps the frame of patch l into the frame of patch
    l-1; ``welds[0]`` is ignored.  When ``interfaces`` (pair -> edges) is
    given, the closing interface between the last and first patch is
    checked against ``threshold``.
    """
    L = len(patches)
    if L == 1:
        p = patches[0]
        return UnifiedImage(p.vertex_ids, p.image.copy(), {}, 0.0, [MobiusParams()])
    comp = [MobiusParams()]
    for l in range(1, L):
        comp.append(comp[-1].compose(welds[l]))
    acc = {}
    per_patch = []
    for p, T in zip(patches, comp):
        img = mobius_apply(p.image, T)
        per_patch.append(dict(zip(p.vertex_ids.tolist(), img)))
        for g, z in zip(p.vertex_ids.tolist(), img):
            acc.setdefault(g, []).append(z)
    ids = np.array(sorted(acc), dtype=np.int64)
    image = np.array([np.mean(acc[g]) for g in ids])
    gaps = {}
    closure = 0.0
    if interfaces is not None:
        for l in range(L):
            a, b = patches[l].patch_id, patches[(l + 1) % L].patch_id
            edges = interfaces.get(a, {}).get(b)
            if edges is None or len(edges) == 0:
                raise ChainMisclosure(f"patches {a} and {b} share no interface")
            vids = np.unique(edges)
            za = np.array([per_patch[l][int(v)] for v in vids])
            zb = np.array([per_patch[(l + 1) % L][int(v)] for v in vids])
            gaps[(a, b)] = float(np.max(np.abs(za - zb)))
        closure = gaps[(patches[-1].patch_id, patches[0].patch_id)]
        if not closure <= threshold:
            raise ChainMisclosure(f"chain closure mismatch {closure:.3e} above {threshold:.3e}")
    if faces is not None:
        fl = faces[np.all(np.isin(faces, ids), axis=1)]
        if euler_characteristic(fl) != 0:
            raise ChainMisclosure("welded chain is not an annulus")
    return UnifiedImage(ids, image, gaps, closure, comp)


# --------------------------------------------------------------- annulus map


def _face_gradients(verts, faces):
    """Per-face gradient operator in the face frame.

    Returns complex coefficients g (F x 3) such that the gradient of a
    linear interpolant with corner values x is sum_j g[f, j] x_j, encoded as
    a complex number (d/de1 + i d/de2).
    """
    _, _, _, z = face_frames(verts, faces)
    area2 = (np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0])).imag
    g = np.zeros((len(faces), 3), dtype=complex)
    for j in range(3):
        # gradient of hat function j: rot90 of the opposite edge / (2A)
        e = z[:, (j + 2) % 3] - z[:, (j + 1) % 3]
        g[:, j] = 1j * e / area2
    return g, 0.5 * area2


def _cut_path(sm_faces, nverts, inner, outer, weights):
    """Shortest edge path from the inner to the outer loop through interior vertices."""
    bset = np.zeros(nverts, bool)
    bset[inner] = True
    bset[outer] = True
    A = weights.tocoo()
    keep = ~(bset[A.row] & bset[A.col]) | (np.isin(A.row, inner) & np.isin(A.col, outer)) | (
        np.isin(A.row, outer) & np.isin(A.col, inner)
    )
    # no travelling along one loop: drop edges between two vertices of the same loop
    in_i = np.isin(A.row, inner) & np.isin(A.col, inner)
    in_o = np.isin(A.row, outer) & np.isin(A.col, outer)
    keep &= ~(in_i | in_o)
    G = sparse.csr_matrix((A.data[keep], (A.row[keep], A.col[keep])), shape=A.shape)
    dist, pred, src = csgraph.dijkstra(G, directed=False, indices=inner, min_only=True, return_predecessors=True)
    tgt = outer[np.argmin(dist[outer])]
    if not np.isfinite(dist[tgt]):
        raise SolverFailure("no cut path between annulus boundaries")
    path = [int(tgt)]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def _cut_open(faces, path):
    """Duplicate path vertices so the path becomes two boundary arcs.

    Returns (new_faces, origin) where origin[new_id] = old id.
    """
    F = len(faces)
    cut = set()
    for u, v in zip(path[:-1], path[1:]):
        cut.add((min(u, v), max(u, v)))
    parent = list(range(3 * F))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    edge_map = {}
    for f in range(F):
        for k in range(3):
            u, v = int(faces[f, k]), int(faces[f, (k + 1) % 3])
            edge_map.setdefault((min(u, v), max(u, v)), []).append(f)
    corner = {}
    for f in range(F):
        for k in range(3):
            corner[(f, int(faces[f, k]))] = 3 * f + k
    for e, fs in edge_map.items():
        if len(fs) == 2 and e not in cut:
            f, g = fs
            for v in e:
                union(corner[(f, v)], corner[(g, v)])
    roots = {}
    origin = []
    new_faces = np.zeros_like(faces)
    for f in range(F):
        for k in range(3):
            r = find(3 * f + k)
            if r not in roots:
                roots[r] = len(origin)
                origin.append(int(faces[f, k]))
            new_faces[f, k] = roots[r]
    return new_faces, np.array(origin, dtype=np.int64)


def annulus_map(mesh: TriMesh, face_ids, inner_loop_global, region_id=0):
    """Map a topological annulus onto rho < |z| < 1 with the inner loop on |z| = rho.

    The modulus comes from the harmonic flux of u (u = 0 inside, 1 outside):
    log(1/rho) = 2 pi / flux.  The angular coordinate is the conjugate
    harmonic function, recovered on the annulus cut open along a shortest
    inner-to-outer path and scaled by its period.
    """
    sm = submesh(mesh.faces, face_ids)
    if euler_characteristic(sm.faces) != 0:
        raise InadmissiblePartition(f"region {region_id} is not an annulus")
    loops = boundary_loops(sm.faces)
    if len(loops) != 2:
        raise InadmissiblePartition(f"region {region_id} has {len(loops)} boundary loops")
    inner_set = set(int(v) for v in inner_loop_global)
    hit = [sum(int(sm.vertex_ids[v]) in inner_set for v in lp) for lp in loops]
    ii = int(np.argmax(hit))
    inner, outer = loops[ii], loops[1 - ii]
    verts = mesh.vertices[sm.vertex_ids]
    n = len(verts)
    W = cotangent_weights(verts, sm.faces)
    u = dirichlet_solve(W, np.concatenate([inner, outer]), np.concatenate([np.zeros(len(inner)), np.ones(len(outer))]))
    Wu = W.tocoo()
    flux = 0.5 * float(np.sum(Wu.data * (u[Wu.row] - u[Wu.col]) ** 2))
    if not flux > 0:
        raise ModulusDivergence(f"region {region_id}: zero harmonic flux")
    rho = math.exp(-2 * math.pi / flux)
    if not 0 < rho < 1:
        raise ModulusDivergence(f"region {region_id}: modulus {rho} outside (0, 1)")

    # conjugate harmonic on the cut-open annulus
    elen = W.copy()
    E = elen.tocoo()
    elen = sparse.csr_matrix((np.linalg.norm(verts[E.row] - verts[E.col], axis=1) + 1e-300, (E.row, E.col)), shape=E.shape)
    path = _cut_path(sm.faces, n, inner, outer, elen)
    cf, origin = _cut_open(sm.faces, path)
    cverts = verts[origin]
    g, area = _face_gradients(cverts, cf)
    grad_u = np.sum(g * u[origin][cf], axis=1)
    target = 1j * grad_u  # rotate by +90 degrees
    # least squares: sum_f area |grad v - target|^2
    nc = len(origin)
    rows = np.repeat(np.arange(len(cf)), 3)
    sa = np.sqrt(area)
    G = sparse.csr_matrix(((g * sa[:, None]).ravel(), (rows, cf.ravel())), shape=(len(cf), nc))
    Gr = sparse.vstack([G.real, G.imag]).tocsr()
    rhs = np.concatenate([(target * sa).real, (target * sa).imag])
    N = (Gr.T @ Gr).tocsc()
    b = Gr.T @ rhs
    N = N + sparse.diags(np.r_[1.0, np.zeros(nc - 1)])  # pin the additive constant
    v = sla.spsolve(N, b)
    if not np.all(np.isfinite(v)):
        raise SolverFailure(f"region {region_id}: conjugate solve failed")
    # period: jump of v across the cut, read at the duplicated path vertices
    jumps = []
    for p in path:
        copies = np.nonzero(origin == p)[0]
        if len(copies) >= 2:
            vals = v[copies]
            jumps.append(vals.max() - vals.min())
    period = float(np.median(jumps)) if jumps else flux
    theta_ls = np.zeros(n)
    theta_ls[origin] = 2 * math.pi * v / period  # any copy; only exp(i theta) is used
    # boundary angles from the cumulative discrete flux (monotone by construction)
    q = laplacian(W) @ u
    z_b = []
    for lp, r, sign in ((outer, 1.0, 1.0), (inner, rho, -1.0)):
        ql = np.abs(q[lp])
        inc = math.pi * (ql + np.roll(ql, -1)) / flux
        # ears (faces with three loop vertices) can carry zero flux; a small
        # arc-length share keeps the angles strictly increasing
        seg = np.linalg.norm(verts[np.roll(lp, -1)] - verts[lp], axis=1)
        inc = inc + 1e-3 * 2 * math.pi * seg / seg.sum()
        inc *= 2 * math.pi / inc.sum()
        th = np.concatenate([[0.0], np.cumsum(inc)[:-1]]) * sign
        twist = np.angle(np.sum(np.exp(1j * (theta_ls[lp] - th))))
        z_b.append(r * np.exp(1j * (th + twist)))
    bidx = np.concatenate([outer, inner])
    z = dirichlet_solve(W, bidx, np.concatenate(z_b))
    if np.sum(signed_areas(z, sm.faces)) < 0:
        z = np.conj(z)
    sa_img = signed_areas(z, sm.faces)
    if np.any(sa_img <= FOLD_TOL):
        raise MapFoldover(f"region {region_id}: {int(np.sum(sa_img <= 0))} flipped faces in annulus map")
    return AnnulusMap(region_id, sm.vertex_ids, z, rho, sm.vertex_ids[inner], sm.vertex_ids[outer], flux)


# --------------------------------------------------------------- global weld


def global_weld(annuli, interfaces, vertices):
    """Similarities T_k (T_0 = identity) minimizing the weighted seam mismatch.

    ``interfaces[k][l]`` lists the edges shared by regions k and l.
    Returns ``(transforms, residual, residual_at_identity)``.
    """
    n = len(annuli)
    if n == 1:
        return [SimilarityParams()], 0.0, 0.0
    adj = sparse.lil_matrix((n, n))
    rows = []
    for k in range(n):
        for l, edges in interfaces.get(k, {}).items():
            if l <= k:
                continue
            adj[k, l] = adj[l, k] = 1
            ids, w = interface_weights(vertices, edges)
            zk, zl = annuli[k].at(ids), annuli[l].at(ids)
            for z1, z2, ww in zip(zk, zl, w):
                rows.append((k, l, z1, z2, math.sqrt(ww)))
    ncomp, _ = csgraph.connected_components(adj.tocsr(), directed=False)
    if ncomp != 1:
        raise WeldUnderdetermined("region adjacency graph is disconnected")
    m = 2 * (n - 1)
    A = np.zeros((len(rows), m), dtype=complex)
    b = np.zeros(len(rows), dtype=complex)
    for r, (k, l, z1, z2, s) in enumerate(rows):
        # s * (alpha_k z1 + gamma_k - alpha_l z2 - gamma_l)
        for reg, z, sign in ((k, z1, 1.0), (l, z2, -1.0)):
            if reg == 0:
                b[r] -= sign * s * z
            else:
                A[r, 2 * (reg - 1)] += sign * s * z
                A[r, 2 * (reg - 1) + 1] += sign * s
    if np.linalg.matrix_rank(A) < m:
        raise WeldUnderdetermined("seam system is rank deficient")
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.sum(np.abs(A @ x - b) ** 2))
    x_id = np.tile([1.0, 0.0], n - 1).astype(complex)
    resid0 = float(np.sum(np.abs(A @ x_id - b) ** 2))
    out = [SimilarityParams()]
    for k in range(1, n):
        alpha = complex(x[2 * (k - 1)])
        if abs(alpha) < 1e-14:
            raise WeldUnderdetermined(f"region {k} collapses to a point")
        out.append(SimilarityParams(alpha, complex(x[2 * (k - 1) + 1])))
    return out, resid, resid0


# -------------------------------------------------------------- rectification


def project_to_circle(points, circle: Circle, tol=1e-12):
    d = np.asarray(points, dtype=complex) - circle.center
    if np.any(np.abs(d) < tol):
        raise ProjectionSingularity("boundary vertex sits on the circle center")
    return circle.center + circle.radius * d / np.abs(d)


def rectify_boundaries(image, outer_loop, obstacle_loops):
    """Normalize the outer loop to the unit circle and project every loop.

    Returns ``(new_image, circles)`` where ``circles[k]`` is the fitted
    circle of obstacle k after normalization.
    """
    image = np.asarray(image, dtype=complex).copy()
    co = fit_circle(image[outer_loop])
    image = (image - co.center) / co.radius
    image[outer_loop] = project_to_circle(image[outer_loop], Circle(0j, 1.0))
    circles = []
    for lp in obstacle_loops:
        c = fit_circle(image[lp])
        image[lp] = project_to_circle(image[lp], c)
        circles.append(c)
    return image, circles


def _initial_boundary_angles(mesh, guide, circles):
    """Arc-length angles per loop with the phase read from a guide image."""
    ang = {}
    s, L = loop_arclength(mesh.vertices, mesh.outer_loop)
    ph = float(np.angle(guide[mesh.outer_loop[0]]))
    ang[-1] = ph + 2 * math.pi * s / L
    for k, lp in enumerate(mesh.obstacle_loops):
        s, L = loop_arclength(mesh.vertices, lp)
        ph = float(np.angle(guide[lp[0]] - circles[k].center))
        ang[k] = ph - 2 * math.pi * s / L
    return ang


def _fallback_circles(n):
    return [Circle(0.5 * np.exp(2j * math.pi * k / n), 0.3 * math.sin(math.pi / max(n, 2)) * 0.5) for k in range(n)]


def circles_admissible(circles, margin=0.0):
    for i, c in enumerate(circles):
        if abs(c.center) + c.radius >= 1 - margin:
            return False
        for d in circles[i + 1 :]:
            if abs(c.center - d.center) <= c.radius + d.radius + margin:
                return False
    return True


def _anticonformal_operator(mesh):
    """Sparse complex rows sqrt(A_f) * d/dzbar of the piecewise-linear map."""
    _, _, _, z = face_frames(mesh.vertices, mesh.faces)
    F = len(z)
    w = np.zeros((F, 3), dtype=complex)
    D = np.zeros(F, dtype=complex)
    for j in range(3):
        e = z[:, (j + 1) % 3] - z[:, (j + 2) % 3]
        w[:, j] = e
        D += np.conj(z[:, j]) * e
    area = np.abs(D) / 4.0
    w = w / D[:, None] * np.sqrt(area)[:, None]
    rows = np.repeat(np.arange(F), 3)
    return sparse.csr_matrix((w.ravel(), (rows, mesh.faces.ravel())), shape=(F, mesh.n_vertices))


def refine_circle_domain(mesh: TriMesh, angles, circles, iters=60, eps=1e-7, tol=1e-10):
    """Least-squares conformal map with every boundary loop kept on a circle.

    The outer loop stays on the unit circle; obstacle circle centers and
    radii are free.  Boundary vertices slide tangentially (linearized, then
    re-projected) until the angles settle.  Returns (image, circles, info).
    """
    V = mesh.n_vertices
    M = _anticonformal_operator(mesh)
    loops = [(-1, mesh.outer_loop)] + list(enumerate(mesh.obstacle_loops))
    bmask = np.zeros(V, bool)
    for _, lp in loops:
        bmask[lp] = True
    interior = np.nonzero(~bmask)[0]
    ni = len(interior)
    # column layout: interior (re, im) | t per boundary vertex (outer first one pinned) | (cx, cy, r) per obstacle
    bverts = [(L, v) for L, lp in loops for v in lp]
    tcol = {}
    col = 2 * ni
    for idx, (L, v) in enumerate(bverts):
        if idx == 0:
            continue  # pins the rotation gauge
        tcol[int(v)] = col
        col += 1
    ccol = {}
    for k in range(mesh.n_obstacles):
        ccol[k] = col
        col += 3
    nx = col
    theta = {L: np.array(a, dtype=float) for L, a in angles.items()}
    cen = [complex(c.center) for c in circles]
    rad = [float(c.radius) for c in circles]
    f = np.zeros(V, dtype=complex)
    if ni:
        f[interior] = 0.0
    info = {"iterations": 0, "max_step": None}
    for it in range(iters):
        rr, cc, vv = [], [], []
        f0 = np.zeros(V, dtype=complex)
        rr += list(interior) * 2
        cc += list(range(0, 2 * ni, 2)) + list(range(1, 2 * ni, 2))
        vv += [1.0] * ni + [1j] * ni
        xprev = np.zeros(nx)
        xprev[0:2 * ni:2] = f[interior].real
        xprev[1:2 * ni:2] = f[interior].imag
        for L, lp in loops:
            nvec = np.exp(1j * theta[L])
            tau = 1j * nvec
            for v, nv, tv in zip(lp, nvec, tau):
                v = int(v)
                if v in tcol:
                    rr.append(v)
                    cc.append(tcol[v])
                    vv.append(tv)
                if L == -1:
                    f0[v] = nv
                else:
                    c0 = ccol[L]
                    rr += [v, v, v]
                    cc += [c0, c0 + 1, c0 + 2]
                    vv += [1.0, 1j, nv]
        for k in range(mesh.n_obstacles):
            c0 = ccol[k]
            xprev[c0:c0 + 3] = [cen[k].real, cen[k].imag, rad[k]]
        P = sparse.csr_matrix((np.array(vv, dtype=complex), (rr, cc)), shape=(V, nx))
        A = (M @ P).tocsr()
        b = -(M @ f0)
        Ar = sparse.vstack([A.real, A.imag]).tocsr()
        br = np.concatenate([b.real, b.imag])
        N = (Ar.T @ Ar).tocsc()
        scale = float(N.diagonal().mean())
        N = N + eps * scale * sparse.identity(nx, format="csc")
        rhs = Ar.T @ br + eps * scale * xprev
        try:
            x = sla.spsolve(N, rhs)
        except RuntimeError as exc:
            raise SolverFailure(f"circle refinement solve failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverFailure("non-finite circle refinement")
        f[interior] = x[0:2 * ni:2] + 1j * x[1:2 * ni:2]
        step = 0.0
        for k in range(mesh.n_obstacles):
            c0 = ccol[k]
            cen[k] = complex(x[c0], x[c0 + 1])
            rad[k] = float(x[c0 + 2])
            if rad[k] <= 0:
                raise SolverFailure(f"obstacle {k} circle collapsed during refinement")
        for L, lp in loops:
            r = 1.0 if L == -1 else rad[L]
            t = np.array([x[tcol[int(v)]] if int(v) in tcol else 0.0 for v in lp])
            d = np.arctan2(t, r)
            theta[L] = theta[L] + d
            step = max(step, float(np.max(np.abs(d))))
        info["iterations"] = it + 1
        info["max_step"] = step
        if step < tol:
            break
    for L, lp in loops:
        c, r = (0j, 1.0) if L == -1 else (cen[L], rad[L])
        f[lp] = c + r * np.exp(1j * theta[L])
    info["energy"] = float(np.sum(np.abs(M @ f) ** 2))
    return f, [Circle(c, r) for c, r in zip(cen, rad)], info


# ------------------------------------------------------------------ inflation


def inflation_objective(mesh: TriMesh, image, s, src_area=None):
    src_area = mesh.face_areas() if src_area is None else src_area
    w = mobius_apply(image, MobiusParams(0.0, s))
    ratio = signed_areas(w, mesh.faces) / src_area
    mean = np.sum(src_area * ratio) / np.sum(src_area)
    return float(np.sum(src_area * (ratio - mean) ** 2))


def optimize_mobius_inflation(mesh: TriMesh, image, radius=0.9, grid=17, min_step=1e-4):
    """Mobius parameter (phi = 0) minimizing the spread of the area distortion."""
    A = mesh.face_areas()
    obj = lambda s: inflation_objective(mesh, image, s, A)
    best_s, best = 0j, obj(0j)
    for r in np.linspace(0, radius, grid)[1:]:
        for t in 2 * math.pi * np.arange(grid) / grid:
            s = r * np.exp(1j * t)
            v = obj(s)
            if v < best:
                best_s, best = s, v
    step = radius / (grid - 1)
    while step >= min_step:
        moved = False
        for d in (step, -step, 1j * step, -1j * step):
            s = best_s + d
            if abs(s) > radius:
                continue
            v = obj(s)
            if v < best:
                best_s, best, moved = s, v, True
                break
        if not moved:
            step /= 2
    return MobiusParams(0.0, complex(best_s))


# ---------------------------------------------------------- harmonic extension


def solve_harmonic_extension(mesh: TriMesh, boundary_ids, values):
    W = cotangent_weights(mesh.vertices, mesh.faces)
    return dirichlet_solve(W, boundary_ids, np.asarray(values, dtype=complex))


# ------------------------------------------------------------------ Jacobians


def jacobian_field(mesh: TriMesh, image):
    """Per-face Jacobian (2x2, face frame -> plane), lambda and |mu|."""
    _, _, _, z = face_frames(mesh.vertices, mesh.faces)
    w = np.asarray(image, dtype=complex)[mesh.faces]
    dz1, dz2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
    dw1, dw2 = w[:, 1] - w[:, 0], w[:, 2] - w[:, 0]
    Z = np.stack([np.stack([dz1.real, dz2.real], -1), np.stack([dz1.imag, dz2.imag], -1)], -2)
    Wm = np.stack([np.stack([dw1.real, dw2.real], -1), np.stack([dw1.imag, dw2.imag], -1)], -2)
    J = Wm @ np.linalg.inv(Z)
    a, b, c, d = J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1]
    det = a * d - b * c
    lam = np.sqrt(np.abs(det))
    fz = 0.5 * ((a + d) + 1j * (c - b))
    fzb = 0.5 * ((a - d) + 1j * (c + b))
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(np.abs(fz) > 0, np.abs(fzb) / np.abs(fz), np.inf)
    return J, lam, mu


# ------------------------------------------------------------- orchestration


@dataclass
class MappingOptions:
    weld_threshold: float = np.inf
    chain_threshold: float = np.inf
    refine_iters: int = 60
    refine_eps: float = 1e-7
    inflation_radius: float = 0.9
    inflation_grid: int = 17


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # annotate and re-raise
        from .errors import PoriferousError

        if isinstance(exc, PoriferousError):
            raise StageError(name, exc) from exc
        raise


def _region_stage(mesh, region, subs_by_id, cell_interfaces, opts):
    """Everything one obstacle region computes on its own."""
    record = {"obstacle": region.obstacle, "cells": list(region.cells)}
    cells = [subs_by_id[c] for c in region.cells]
    if len(cells) > 1:
        order = chain_order(region.cells, cell_interfaces)
        patches = [disk_map(mesh, subs_by_id[c].faces, patch_id=c) for c in order]
        welds = [MobiusParams()]
        energies = []
        for l in range(1, len(patches)):
            edges = cell_interfaces[order[l - 1]][order[l]]
            wr = local_weld(patches[l - 1], patches[l], edges, mesh.vertices, opts.weld_threshold)
            welds.append(wr.params)
            energies.append(wr.energy)
        uni = compose_unified(patches, welds, mesh.vertices, mesh.faces[region.faces], cell_interfaces, opts.chain_threshold)
        record.update(chain=order, weld_energies=energies, seam_gaps={f"{a}-{b}": g for (a, b), g in uni.seam_gaps.items()},
                      closure=uni.closure_residual)
    am = annulus_map(mesh, region.faces, mesh.obstacle_loops[region.obstacle], region_id=region.obstacle)
    record["modulus"] = am.modulus
    return am, record


def build_mapping(mesh: TriMesh, subs, gens, options: MappingOptions = None, executor=None):
    """Run the full pipeline and return a :class:`MappedMesh`.

    ``executor`` (optional, ``concurrent.futures``-like) runs the
    independent per-region stages concurrently.
    """
    from .decomposition import obstacle_regions, region_interfaces

    opts = options or MappingOptions()
    report = {"stages": {}}
    n = mesh.n_obstacles
    if n == 0:
        if len(subs) != 1:
            raise StageError("decomposition", InadmissiblePartition("a disk surface needs exactly one cell"))
        pm = _stage("disk_map", disk_map, mesh, subs[0].faces, subs[0].id)
        guide = np.zeros(mesh.n_vertices, dtype=complex)
        guide[pm.vertex_ids] = pm.image
        boundary_vals = guide[mesh.outer_loop]
        circles = []
    else:
        _stage("generators", gens.validate, n)
        regions = _stage("regions", obstacle_regions, subs, gens, mesh)
        subs_by_id = {s.id: s for s in subs}
        cell_interfaces = {s.id: s.interface_edges for s in subs}
        jobs = [(mesh, r, subs_by_id, cell_interfaces, opts) for r in regions]
        if executor is not None:
            results = list(executor.map(_region_stage, *zip(*jobs)))
        else:
            results = [_stage(f"region {r.obstacle}", _region_stage, *j) for r, j in zip(regions, jobs)]
        annuli = [a for a, _ in results]
        report["stages"]["regions"] = [rec for _, rec in results]
        rint = region_interfaces(mesh, regions)
        T, res, res0 = _stage("global_weld", global_weld, annuli, rint, mesh.vertices)
        report["stages"]["global_weld"] = {"residual": res, "residual_identity": res0}
        acc = np.zeros(mesh.n_vertices, dtype=complex)
        cnt = np.zeros(mesh.n_vertices)
        for am, t in zip(annuli, T):
            acc[am.vertex_ids] += similarity_apply(am.image, t)
            cnt[am.vertex_ids] += 1
        if np.any(cnt == 0):
            raise StageError("global_weld", SolverFailure("some vertices belong to no region"))
        welded = acc / cnt
        rect, rcircles = _stage("rectify", rectify_boundaries, welded, mesh.outer_loop, mesh.obstacle_loops)
        report["stages"]["rectify"] = {"circles": [(c.center, c.radius) for c in rcircles]}
        init = rcircles if circles_admissible(rcircles) else _fallback_circles(n)
        angles = _initial_boundary_angles(mesh, rect, init)
        refined, circles, info = _stage(
            "refine", refine_circle_domain, mesh, angles, init, opts.refine_iters, opts.refine_eps
        )
        report["stages"]["refine"] = info
        guide = refined
        boundary_vals = None
    bids = mesh.boundary_vertices()
    if n == 0:
        base = _stage("harmonic", solve_harmonic_extension, mesh, mesh.outer_loop, boundary_vals)
    else:
        base = guide
    s = _stage("inflation", optimize_mobius_inflation, mesh, base, opts.inflation_radius, opts.inflation_grid)
    report["stages"]["inflation"] = {"s": s.a}
    ell = mobius_apply(base[bids], s)
    final = _stage("harmonic", solve_harmonic_extension, mesh, bids, ell)
    final_circles = [fit_circle(final[lp]) for lp in mesh.obstacle_loops]
    mm = MappedMesh(mesh, final, final_circles)
    if np.any(signed_areas(final, mesh.faces) <= 0):
        raise StageError("harmonic", MapFoldover(f"{int(np.sum(signed_areas(final, mesh.faces) <= 0))} flipped faces"))
    mm.report = distortion_report(mm, report)
    return mm


def distortion_report(mm: MappedMesh, stages=None):
    mesh = mm.source
    dev = []
    for lp, c in zip(mesh.obstacle_loops, mm.circles):
        dev.append(float(np.max(np.abs(np.abs(mm.image[lp] - c.center) - c.radius)) / c.radius))
    outer_dev = float(np.max(np.abs(np.abs(mm.image[mesh.outer_loop]) - 1.0)))
    A = mesh.face_areas()
    return {
        "mean_mu": float(np.mean(mm.beltrami)),
        "area_weighted_mu": float(np.sum(A * mm.beltrami) / np.sum(A)),
        "max_mu": float(np.max(mm.beltrami)),
        "min_det": float(np.min(np.linalg.det(mm.jacobians))),
        "outer_radial_deviation": outer_dev,
        "obstacle_radial_deviation": dev,
        "circles": [{"center": [c.center.real, c.center.imag], "radius": c.radius} for c in mm.circles],
        "circles_disjoint_inside": circles_admissible(mm.circles),
        **(stages or {}),
    }


def inverse_map(mm: MappedMesh, q):
    """Face and barycentric coordinates on the surface for a point of the ball world."""
    q = complex(q)
    if not mm.in_domain(q):
        raise OutOfDomain(f"{q} is outside the ball world")
    return mm.locator.locate(q)


def surface_point(mesh: TriMesh, face, bary):
    return np.asarray(bary) @ mesh.vertices[mesh.faces[face]]


def save_mapped(mm: MappedMesh, path):
    """Write a MappedMesh as ``.npz`` (arrays) and return the path.

    Arrays: ``image`` (V complex), ``jacobians`` (F x 2 x 2),
    ``conformal_factor`` (F), ``beltrami`` (F), ``circle_centers`` (n complex),
    ``circle_radii`` (n), plus the source ``vertices``/``faces`` and loops.
    """
    m = mm.source
    lens = np.array([len(m.outer_loop)] + [len(lp) for lp in m.obstacle_loops])
    np.savez_compressed(
        path,
        vertices=m.vertices,
        faces=m.faces,
        loop_lengths=lens,
        loops=np.concatenate([m.outer_loop] + list(m.obstacle_loops)),
        image=mm.image,
        jacobians=mm.jacobians,
        conformal_factor=mm.conformal_factor,
        beltrami=mm.beltrami,
        circle_centers=np.array([c.center for c in mm.circles], dtype=complex),
        circle_radii=np.array([c.radius for c in mm.circles]),
    )
    return path


def load_mapped(path) -> MappedMesh:
    d = np.load(path)
    lens = d["loop_lengths"]
    cuts = np.cumsum(lens)[:-1]
    loops = np.split(d["loops"], cuts)
    mesh = TriMesh(d["vertices"], d["faces"], loops[0], loops[1:])
    circles = [Circle(complex(c), float(r)) for c, r in zip(d["circle_centers"], d["circle_radii"])]
    return MappedMesh(mesh, d["image"], circles, d["jacobians"], d["conformal_factor"], d["beltrami"])


# ---------------------------------------------------- slit welding regression


def slit_weld(z):
    """Welding map w = sqrt(z^2 + 1) (principal branch) of the slit plane."""
    return np.sqrt(np.asarray(z, dtype=complex) ** 2 + 1.0)


def slit_bank_images(eps, ys):
    """Images of the right (+eps) and left (-eps) banks of the slit at heights ys."""
    ys = np.asarray(ys, dtype=float)
    return slit_weld(eps + 1j * ys), slit_weld(-eps + 1j * ys)
