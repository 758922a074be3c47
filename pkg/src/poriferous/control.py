"""Coverage cost, its Riemannian gradient, the control law and safe integration.

Agents live on the surface as (face, barycentric) pairs and are moved by
walking straight steps across faces.  Every candidate position is checked
in the ball world (obstacle clearance and pairwise separation) before it is
accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GradientUnavailable, InsideObstacle, OutOfDomain, StuckAgent
from .mesh import edge_faces, face_frames
from .metric import LengthGraph, MetricField, SurfacePoint, clearance, dynamic_weight, locate_surface_point
from .partition import TWO_PI

# --------------------------------------------------------------- agent types


@dataclass
class AgentState:
    id: int
    face: int
    bary: np.ndarray
    image: complex
    active: bool = True
    r_a: float = 0.02

    @property
    def point(self):
        return SurfacePoint(self.face, self.bary)

    def xyz(self, mesh):
        return self.bary @ mesh.vertices[mesh.faces[self.face]]

    def moved(self, face, bary, image):
        return AgentState(self.id, int(face), np.asarray(bary, float), complex(image), self.active, self.r_a)


def agent_at_image(mm, q, id=0, r_a=0.02):
    sp = locate_surface_point(mm, q)
    return AgentState(id, sp.face, sp.bary, sp.image(mm), True, r_a)


class PerformanceFn:
    """Performance function f(d) with f(0) = 0, f' > 0, f'' > 0 on d > 0."""

    KINDS = {
        "square": (lambda x: x * x, lambda x: 2 * x),
        "square_quartic": (lambda x: x * x + 0.5 * x**4, lambda x: 2 * x + 2 * x**3),
        "cosh": (lambda x: np.cosh(x) - 1.0, np.sinh),
    }

    def __init__(self, name="square"):
        if name not in self.KINDS:
            raise ValueError(f"unknown performance function {name!r}")
        self.name = name
        self._f, self._df = self.KINDS[name]

    def __call__(self, x):
        return self._f(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self._df(np.asarray(x, dtype=float))


@dataclass
class CostBreakdown:
    total: float
    per_agent: np.ndarray
    gradients: list = field(default_factory=list)
    k_p: float = None


# ------------------------------------------------------------------ sectors


def sector_labels(points, phases, bars=(), circles=()):
    """Index of the sector holding each image point.

    Sector i spans the angles from bar i to bar i+1.  Points in a buffer
    ring on the left of bar j belong to sector j-1 because the bar bulges
    around them.
    """
    pts = np.asarray(points, dtype=complex)
    psi = np.asarray(phases, dtype=float)
    N = len(psi)
    if N == 1:
        return np.zeros(pts.shape, dtype=int)
    offs = np.mod(psi - psi[0], TWO_PI)
    offs[0] = 0.0
    a = np.mod(np.angle(pts) - psi[0], TWO_PI)
    lab = np.searchsorted(offs, a, side="right") - 1
    for j, bar in enumerate(bars):
        b = complex(math.cos(bar.psi), math.sin(bar.psi))
        left = (np.conj(b) * pts).imag > 0
        for arc in bar.arcs:
            c = circles[arc["obstacle"]]
            dist = np.abs(pts - c.center)
            ring = (dist > c.radius) & (dist < arc["radius"]) & left & (lab == j)
            lab[ring] = (j - 1) % N
    return lab


# ------------------------------------------------------------------ walking


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


class FaceWalker:
    """Straight-line retraction on a triangle mesh by unfolding across edges."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.e1, self.e2, self.n, _ = face_frames(mesh.vertices, mesh.faces)
        ef = getattr(mesh, "_edge_faces", None) or edge_faces(mesh.faces)
        mesh._edge_faces = ef
        F = mesh.faces
        # nbr[f, k] = face across the edge opposite corner k, or -1
        self.nbr = np.full((len(F), 3), -1, dtype=np.int64)
        for f, (a, b, c) in enumerate(F):
            for k, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                for g in ef[(min(u, v), max(u, v))]:
                    if g != f:
                        self.nbr[f, k] = g

    def tangent_frame(self, face):
        return self.e1[face], self.e2[face]

    def bary_of(self, face, p):
        A, B, C = self.mesh.vertices[self.mesh.faces[face]]
        v0, v1, v2 = B - A, C - A, p - A
        d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
        d20, d21 = v2 @ v0, v2 @ v1
        den = d00 * d11 - d01 * d01
        v = (d11 * d20 - d01 * d21) / den
        w = (d00 * d21 - d01 * d20) / den
        return np.array([1 - v - w, v, w])

    def walk(self, face, bary, disp, max_hops=10000):
        """Move by the tangent vector ``disp`` (3D, in the plane of ``face``)."""
        V, F = self.mesh.vertices, self.mesh.faces
        f = int(face)
        b = np.asarray(bary, dtype=float)
        d = np.asarray(disp, dtype=float)
        d = d - (d @ self.n[f]) * self.n[f]
        for _ in range(max_hops):
            P = b @ V[F[f]]
            bt = self.bary_of(f, P + d)
            db = bt - b
            if np.all(bt >= -1e-14):
                return f, np.clip(bt, 0, None) / np.clip(bt, 0, None).sum()
            t_exit, k_exit = np.inf, int(np.argmin(bt))
            for k in range(3):
                if db[k] < 0:
                    t = -b[k] / db[k]
                    if t < t_exit:
                        t_exit, k_exit = t, k
            t_exit = min(max(t_exit, 0.0), 1.0)
            g = self.nbr[f, k_exit]
            if g < 0:
                raise OutOfDomain("step leaves the surface")
            Pn = P + t_exit * d
            rest = (1 - t_exit) * d
            u, v = F[f][(k_exit + 1) % 3], F[f][(k_exit + 2) % 3]
            e = V[v] - V[u]
            e = e / np.linalg.norm(e)
            wf = _cross(self.n[f], e)
            if wf @ (V[F[f][k_exit]] - V[u]) > 0:
                wf = -wf
            wg = _cross(self.n[g], e)
            opp = [x for x in F[g] if x != u and x != v][0]
            if wg @ (V[opp] - V[u]) < 0:
                wg = -wg
            d = (rest @ e) * e + (rest @ wf) * wg
            b = self.bary_of(g, Pn)
            b = np.clip(b, 0, None)
            b = b / b.sum()
            f = int(g)
            if np.linalg.norm(d) == 0:
                return f, b
        raise OutOfDomain("face walk did not terminate")


# ------------------------------------------------------------------ model


class CoverageModel:
    """Shared, read-only context for cost and gradient evaluation."""

    def __init__(self, mm, face_density, metric: MetricField, f: PerformanceFn = None, graph: LengthGraph = None):
        self.mm = mm
        mesh = mm.source
        self.metric = metric
        self.f = f or PerformanceFn()
        self.graph = graph or LengthGraph(mm, metric)
        self.graph.all_pairs()
        # face weight = rho(centroid) * surface area
        self.face_weight = np.asarray(face_density, dtype=float) * mesh.face_areas()
        self.centroids = mm.image[mesh.faces].mean(axis=1)
        self.walker = FaceWalker(mesh)
        self.lam_v = mm.vertex_lambda()
        L = np.linalg.norm(mesh.vertices[mesh.faces] - mesh.vertices[np.roll(mesh.faces, 1, axis=1)], axis=2)
        self.edge_len = L.mean(axis=1)

    def image_of(self, face, bary):
        return complex(np.dot(bary, self.mm.image[self.mm.source.faces[face]]))

    def lam(self, face, bary):
        return float(np.dot(bary, self.lam_v[self.mm.source.faces[face]]))

    def distances(self, sp: SurfacePoint, face_ids, img=None):
        return self.graph.face_distances(sp, face_ids, img)

    def agent_cost(self, sp: SurfacePoint, face_ids):
        if len(face_ids) == 0 or not np.any(self.face_weight[face_ids]):
            return 0.0
        d = self.distances(sp, face_ids)
        return float(np.sum(self.f(d) * self.face_weight[face_ids]))

    def feasible(self, img, others=()):
        s = clearance(img, self.metric)
        if np.any(s <= 0):
            return False
        oth = np.asarray(list(others), dtype=complex)
        return not (oth.size and np.any(np.abs(oth - img) <= 2 * self.metric.r_a))

    def sector_faces(self, phases, bars=(), circles=()):
        lab = sector_labels(self.centroids, phases, bars, circles)
        return [np.nonzero(lab == i)[0] for i in range(len(phases))]


def coverage_cost(agents, sectors, model: CoverageModel):
    """J = sum_i sum_{faces in sector i} f(d_l(p_i, centroid)) rho area."""
    per = np.array([model.agent_cost(a.point, fids) for a, fids in zip(agents, sectors)])
    return CostBreakdown(float(per.sum()), per)


# ------------------------------------------------------------------ gradient


@dataclass
class Gradient:
    raw: np.ndarray  # dJ/dp in the surface tangent plane (3D vector)
    scaled: np.ndarray  # eta^-1 dJ/dp
    eta: float  # scalar factor of eta = eta * I
    h: float
    sigma: float


def metric_factor(model: CoverageModel, agent: AgentState, others=()):
    """eta_i = lambda^2 (1 + sigma_i)^2 and sigma_i itself."""
    sigma = dynamic_weight(agent.image, others, model.metric)
    lam = model.lam(agent.face, agent.bary)
    return lam * lam * (1 + sigma) ** 2, sigma


def _shifted_cost(model, agent, faces, vec, others):
    f, b = model.walker.walk(agent.face, agent.bary, vec)
    img = model.image_of(f, b)
    if not model.feasible(img, others):
        raise InsideObstacle("stencil point is infeasible")
    return model.agent_cost(SurfacePoint(f, b), faces)


def raw_gradient(model, agent, faces, others=(), h=None, h_min=None):
    """Central differences along the tangent frame of the agent's face."""
    el = model.edge_len[agent.face]
    h = 0.4 * el if h is None else h
    h_min = 0.1 * el if h_min is None else h_min
    e1, e2 = model.walker.tangent_frame(agent.face)
    while h >= h_min:
        try:
            g = np.zeros(3)
            for e in (e1, e2):
                jp = _shifted_cost(model, agent, faces, h * e, others)
                jm = _shifted_cost(model, agent, faces, -h * e, others)
                g += (jp - jm) / (2 * h) * e
            return g, h
        except (OutOfDomain, InsideObstacle):
            h *= 0.5
    raise GradientUnavailable(f"agent {agent.id} is within the minimum stencil of the boundary")


def riemannian_gradient(model, agent, faces, others=(), h=None):
    raw, h = raw_gradient(model, agent, faces, others, h)
    eta, sigma = metric_factor(model, agent, others)
    return Gradient(raw, raw / eta, eta, h, sigma)


def control_input(grad: Gradient, k_p, v_max=None, dt=None, lam=1.0):
    """u = -k_p eta^-1 dJ/dp, clamped so one step moves at most v_max in the ball world."""
    u = -k_p * grad.scaled
    if v_max is not None and dt is not None:
        cap = v_max / (lam * dt)
        n = np.linalg.norm(u)
        if n > cap:
            u = u * (cap / n)
    return u


@dataclass
class StepOutcome:
    agent: AgentState
    dt: float
    halvings: int
    cost_before: float
    cost_after: float


def integrate_step(model, agent, u, dt, faces=None, others=(), max_halvings=8, cost_before=None):
    """Retract p + dt u onto the surface; halve dt until the result is feasible.

    With ``faces`` given, a step must also not raise the agent's own sector
    cost, which makes the frozen-partition flow monotone.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        return StepOutcome(agent, 0.0, 0, cost_before, cost_before)
    if faces is not None and cost_before is None:
        cost_before = model.agent_cost(agent.point, faces)
    step = dt
    for k in range(max_halvings + 1):
        try:
            f, b = model.walker.walk(agent.face, agent.bary, step * u)
        except OutOfDomain:
            step *= 0.5
            continue
        img = model.image_of(f, b)
        if model.feasible(img, others):
            new = agent.moved(f, b, img)
            if faces is None:
                return StepOutcome(new, step, k, None, None)
            after = model.agent_cost(new.point, faces)
            if after <= cost_before:
                return StepOutcome(new, step, k, cost_before, after)
        step *= 0.5
    raise StuckAgent(f"agent {agent.id} found no admissible step after {max_halvings} halvings")
