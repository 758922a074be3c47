"""Geodesic Voronoi decomposition of a poriferous surface.

Faces are split into connected cells around generator vertices; every cell
must be a topological disk (TYPE_I) or an annulus holding exactly one
obstacle (TYPE_II).  Obstacles without a TYPE_II cell are enclosed by the
union of the TYPE_I cells whose generators are assigned to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import InadmissiblePartition
from .mesh import TriMesh, edge_faces, euler_characteristic, face_adjacency, unique_edges

TYPE_I = "TYPE_I"
TYPE_II = "TYPE_II"


@dataclass
class GeneratorSet:
    points: list
    obstacle_assignment: dict = field(default_factory=dict)
    star_shaped: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = [int(p) for p in self.points]
        self.obstacle_assignment = {int(k): [int(g) for g in v] for k, v in self.obstacle_assignment.items()}
        self.star_shaped = {int(k): bool(v) for k, v in self.star_shaped.items()}

    def validate(self, n_obstacles):
        if not self.points:
            raise InadmissiblePartition("generator set is empty")
        if len(set(self.points)) != len(self.points):
            raise InadmissiblePartition("generators must be distinct vertices")
        seen = []
        for k in range(n_obstacles):
            gs = self.obstacle_assignment.get(k, [])
            if not gs:
                raise InadmissiblePartition(f"obstacle {k} has no assigned generator")
            if not self.star_shaped.get(k, True) and len(gs) < 2:
                raise InadmissiblePartition(f"non-star obstacle {k} needs at least two generators")
            for g in gs:
                if g not in self.points:
                    raise InadmissiblePartition(f"assigned generator {g} is not in the generator list")
            seen.extend(gs)
        if n_obstacles and sorted(seen) != sorted(self.points):
            raise InadmissiblePartition("every generator must be assigned to exactly one obstacle")
        return True

    def owner(self, g):
        for k, gs in self.obstacle_assignment.items():
            if g in gs:
                return k
        return None


@dataclass
class Subdomain:
    id: int
    faces: np.ndarray
    kind: str = None
    enclosed_obstacle: int = None
    interface_edges: dict = field(default_factory=dict)
    generator: int = None


@dataclass
class Region:
    """Annular region around obstacle k made of one or more cells."""

    obstacle: int
    faces: np.ndarray
    cells: list


def geodesic_distances(mesh: TriMesh, sources):
    """Graph-geodesic (Dijkstra) distances from each source to every vertex."""
    e = unique_edges(mesh.faces)
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    G = sparse.csr_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return csgraph.dijkstra(G, directed=False, indices=np.asarray(sources))


def face_centroid_distances(mesh, D):
    """Distance from each source to each face centroid.

    The centroid is reached through whichever corner gives the shortest
    total (corner distance plus straight hop to the centroid).  Using only
    the nearest corner leaves stray single faces along cell borders.
    """
    p = mesh.vertices[mesh.faces]
    hop = np.linalg.norm(p - p.mean(axis=1, keepdims=True), axis=2)
    return (D[:, mesh.faces] + hop[None]).min(axis=2)


def cell_is_connected(faces_all, face_ids):
    if len(face_ids) == 0:
        return False
    A = face_adjacency(faces_all[face_ids])
    nc, _ = csgraph.connected_components(A, directed=False)
    return nc == 1


def contained_obstacles(mesh: TriMesh, face_ids):
    """Obstacle loops whose every edge bounds a face of ``face_ids``."""
    fset = set(int(f) for f in face_ids)
    ef = _edge_face_cache(mesh)
    out = []
    for k, lp in enumerate(mesh.obstacle_loops):
        ok = True
        for u, v in zip(lp, np.roll(lp, -1)):
            fs = ef[(min(u, v), max(u, v))]
            if fs[0] not in fset:
                ok = False
                break
        if ok:
            out.append(k)
    return out


def touched_obstacles(mesh: TriMesh, face_ids):
    fset = set(int(f) for f in face_ids)
    ef = _edge_face_cache(mesh)
    out = []
    for k, lp in enumerate(mesh.obstacle_loops):
        if any(ef[(min(u, v), max(u, v))][0] in fset for u, v in zip(lp, np.roll(lp, -1))):
            out.append(k)
    return out


def _edge_face_cache(mesh):
    cache = getattr(mesh, "_edge_faces", None)
    if cache is None:
        cache = edge_faces(mesh.faces)
        mesh._edge_faces = cache
    return cache


def classify_subdomain(sub: Subdomain, mesh: TriMesh):
    faces = mesh.faces[sub.faces]
    chi = euler_characteristic(faces)
    obs = contained_obstacles(mesh, sub.faces)
    if chi == 1 and not obs:
        sub.kind, sub.enclosed_obstacle = TYPE_I, None
    elif chi == 0 and len(obs) == 1:
        sub.kind, sub.enclosed_obstacle = TYPE_II, obs[0]
    else:
        raise InadmissiblePartition(f"cell {sub.id}: chi={chi}, enclosed obstacles={obs}")
    return sub.kind


def _interfaces(mesh, labels):
    out = {}
    for (u, v), fs in _edge_face_cache(mesh).items():
        if len(fs) == 2:
            a, b = labels[fs[0]], labels[fs[1]]
            if a != b:
                out.setdefault(a, {}).setdefault(b, []).append((u, v))
                out.setdefault(b, {}).setdefault(a, []).append((u, v))
    return {a: {b: np.array(sorted(es), dtype=np.int64) for b, es in d.items()} for a, d in out.items()}


def gvt_partition(mesh: TriMesh, gens: GeneratorSet, classify=True):
    """Assign faces to the geodesically nearest generator and build cells."""
    pts = np.asarray(gens.points, dtype=np.int64)
    if len(set(pts.tolist())) != len(pts):
        raise InadmissiblePartition("generators must be distinct vertices")
    D = geodesic_distances(mesh, pts)
    labels = np.argmin(face_centroid_distances(mesh, D), axis=0)  # first minimum -> lower index wins
    return cells_from_labels(mesh, labels, len(pts), generators=pts, classify=classify)


def cells_from_labels(mesh, labels, n_cells, generators=None, classify=True):
    labels = np.asarray(labels)
    inter = _interfaces(mesh, labels)
    subs = []
    for i in range(n_cells):
        fids = np.nonzero(labels == i)[0]
        if not cell_is_connected(mesh.faces, fids):
            raise InadmissiblePartition(f"cell {i} is empty or disconnected")
        sub = Subdomain(i, fids, interface_edges=inter.get(i, {}), generator=None if generators is None else int(generators[i]))
        if classify:
            classify_subdomain(sub, mesh)
        subs.append(sub)
    return subs


@dataclass
class AdmissibilityReport:
    passed: bool
    rows: list  # dicts with id, chi, connected, obstacles, kind, error

    def failures(self):
        return [r["id"] for r in self.rows if r["error"]]

    def to_text(self):
        lines = [f"admissibility: {'PASS' if self.passed else 'FAIL'}"]
        for r in self.rows:
            lines.append(
                f"cell {r['id']}: chi={r['chi']} connected={r['connected']} obstacles={r['obstacles']} "
                f"kind={r['kind']}" + (f" error={r['error']}" if r["error"] else "")
            )
        return "\n".join(lines)


def validate_admissibility(subs, mesh: TriMesh):
    rows = []
    for s in subs:
        chi = euler_characteristic(mesh.faces[s.faces])
        conn = cell_is_connected(mesh.faces, s.faces)
        obs = contained_obstacles(mesh, s.faces) if len(s.faces) else []
        err = None
        kind = None
        if not conn:
            err = "disconnected"
        else:
            probe = Subdomain(s.id, s.faces)
            try:
                kind = classify_subdomain(probe, mesh)
            except InadmissiblePartition as exc:
                err = str(exc)
        rows.append(dict(id=s.id, chi=chi, connected=conn, obstacles=obs, kind=kind, error=err))
    allf = np.concatenate([s.faces for s in subs]) if subs else np.empty(0, int)
    cover_ok = len(allf) == mesh.n_faces and len(np.unique(allf)) == mesh.n_faces
    if not cover_ok:
        rows.append(dict(id=-1, chi=None, connected=None, obstacles=[], kind=None, error="cells do not partition the faces"))
    return AdmissibilityReport(all(r["error"] is None for r in rows), rows)


def obstacle_regions(subs, gens: GeneratorSet, mesh: TriMesh):
    """Group cells into one annular region per obstacle."""
    regions = []
    by_gen = {s.generator: s for s in subs}
    for k in range(mesh.n_obstacles):
        cells = [by_gen[g] for g in gens.obstacle_assignment[k]]
        if len(cells) == 1 and cells[0].kind == TYPE_II:
            if cells[0].enclosed_obstacle != k:
                raise InadmissiblePartition(f"cell {cells[0].id} encloses obstacle {cells[0].enclosed_obstacle}, not {k}")
        else:
            for c in cells:
                if c.kind != TYPE_I:
                    raise InadmissiblePartition(f"obstacle {k}: mixed cell types in its cluster")
        faces = np.sort(np.concatenate([c.faces for c in cells]))
        if not cell_is_connected(mesh.faces, faces):
            raise InadmissiblePartition(f"region of obstacle {k} is disconnected")
        chi = euler_characteristic(mesh.faces[faces])
        if chi != 0 or contained_obstacles(mesh, faces) != [k]:
            raise InadmissiblePartition(f"cells around obstacle {k} do not form an annulus enclosing it")
        regions.append(Region(k, faces, [c.id for c in cells]))
    return regions


def region_interfaces(mesh, regions):
    labels = np.full(mesh.n_faces, -1)
    for r in regions:
        labels[r.faces] = r.obstacle
    return _interfaces(mesh, labels)


def suggest_generators(mesh: TriMesh, non_star=(), spread=0.2, tilt=0.6):
    """One generator per obstacle on its loop, facing the disk center.

    Non-star obstacles get two generators on opposite sides of the loop.
    """
    pts, asg = [], {}
    xy = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    for k, lp in enumerate(mesh.obstacle_loops):
        z = xy[lp]
        c = z.mean()
        if k in non_star:
            targets = [c + spread * np.exp(1j * (tilt + t)) for t in (0.0, np.pi)]
        else:
            targets = [0.5 * c]
        asg[k] = [int(lp[np.argmin(np.abs(z - t))]) for t in targets]
        pts += asg[k]
    if not pts:
        pts = [int(np.argmin(np.abs(xy)))]
    return GeneratorSet(pts, asg, {k: False for k in non_star})
