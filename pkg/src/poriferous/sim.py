"""Coverage runs: anchor sweep, balancing, agent motion, faults and analyses."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph

from . import partition as P
from .conformal import MappingOptions, build_mapping
from .config import ScenarioConfig
from .control import (
    CoverageModel,
    PerformanceFn,
    agent_at_image,
    control_input,
    integrate_step,
    riemannian_gradient,
)
from .decomposition import gvt_partition
from .errors import (
    GradientUnavailable,
    MissionAbort,
    NoConsensus,
    OutOfDomain,
    StepRejected,
    StuckAgent,
    TopologyViolation,
)
from .metric import DensityField, ImageDensity, MetricField, clearance, face_mass, transport_density
from .mesh import face_adjacency

log = logging.getLogger(__name__)

AGENT_CAP = 10**9


def fmt(x):
    return f"{x:.12g}"


# ------------------------------------------------------------------- world


@dataclass
class World:
    mesh: object
    mm: object
    circles: list
    density: DensityField
    rho_hat: np.ndarray
    image_density: ImageDensity
    table: P.MarginalTable
    profiles: list
    total_mass: float
    model: CoverageModel
    metric: MetricField


def density_from_config(spec, base=None):
    spec = dict(spec or {})
    kind = spec.get("kind", "uniform")
    scale = float(spec.get("scale", 1.0))
    if kind == "samples":
        path = Path(spec["file"])
        if base is not None and not path.is_absolute():
            path = Path(base) / path
        return DensityField.from_file(path, scale)
    return DensityField(kind, None, scale)


def face_density(density: DensityField, mesh):
    if density.kind == "samples":
        return density.at_vertices(mesh)[mesh.faces].mean(axis=1)
    return density.at_points(mesh.face_centroids())


def build_world(cfg: ScenarioConfig, mm=None, mesh=None):
    base = getattr(cfg, "_base", None)
    if mm is None:
        mesh = mesh if mesh is not None else cfg.load_mesh(base)
        gens = cfg.generator_set()
        gens.validate(mesh.n_obstacles)
        subs = gvt_partition(mesh, gens)
        mm = build_mapping(mesh, subs, gens, MappingOptions(cfg.weld_threshold, cfg.chain_threshold))
    mesh = mm.source
    density = density_from_config(cfg.density, base)
    rho_hat = transport_density(density, mm)
    img_rho = ImageDensity(mm, rho_hat)
    total = float(face_mass(rho_hat, mm.image, mesh.faces).sum())
    circles = list(mm.circles)
    table = P.MarginalTable(img_rho, circles, total_mass=total, tol=cfg.mass_tol)
    metric = MetricField.from_circles(circles, cfg.mu, cfg.r_a)
    model = CoverageModel(mm, face_density(density, mesh), metric, PerformanceFn(cfg.performance))
    return World(mesh, mm, circles, density, rho_hat, img_rho, table, P.image_profiles(img_rho, circles), total, model, metric)


# --------------------------------------------------------- communication


class CommGraph:
    """Undirected communication graph; by default the cycle over active agents."""

    def __init__(self, nodes, edges=None):
        self.nodes = list(nodes)
        if edges is None:
            n = len(self.nodes)
            edges = [(self.nodes[i], self.nodes[(i + 1) % n]) for i in range(n)] if n > 1 else []
        self.adj = {v: set() for v in self.nodes}
        for a, b in edges:
            if a != b:
                self.adj[a].add(b)
                self.adj[b].add(a)

    @classmethod
    def cycle(cls, nodes):
        return cls(nodes)

    def remove(self, ids):
        keep = [v for v in self.nodes if v not in set(ids)]
        return CommGraph.cycle(keep)

    def _matrix(self):
        idx = {v: i for i, v in enumerate(self.nodes)}
        A = np.zeros((len(self.nodes), len(self.nodes)))
        for a, nb in self.adj.items():
            for b in nb:
                A[idx[a], idx[b]] = 1
        return A

    @property
    def connected(self):
        if len(self.nodes) <= 1:
            return True
        nc, _ = csgraph.connected_components(self._matrix(), directed=False)
        return nc == 1

    @property
    def diameter(self):
        if not self.connected:
            return math.inf
        D = csgraph.shortest_path(self._matrix(), unweighted=True, directed=False)
        return int(D.max()) if len(self.nodes) else 0


class MessageLog:
    """In-process record of neighbour exchanges (counts only)."""

    def __init__(self):
        self.total = 0
        self.per_kind = {}
        self.per_step = []
        self._current = 0

    def send(self, src, dst, kind):
        self.total += 1
        self._current += 1
        self.per_kind[kind] = self.per_kind.get(kind, 0) + 1

    def end_step(self):
        self.per_step.append(self._current)
        self._current = 0


def synchronize_virtual_center(graph: CommGraph, boundary_agents, true_center, initial=None, tol=1e-6, max_iter=100000):
    """Pinned-leader averaging of a shared center estimate.

    Returns ``(iterations, errors)`` where ``errors[t]`` is the largest
    estimate error after t rounds.
    """
    if not graph.connected:
        raise NoConsensus("communication graph is disconnected")
    leaders = set(boundary_agents)
    if not leaders:
        raise NoConsensus("no agent holds the true center")
    c = complex(true_center)
    est = {v: (c if v in leaders else complex((initial or {}).get(v, 0.0))) for v in graph.nodes}
    errs = [max(abs(e - c) for e in est.values())]
    it = 0
    while errs[-1] >= tol:
        if it >= max_iter:
            raise NoConsensus("consensus did not reach tolerance")
        new = {}
        for v in graph.nodes:
            if v in leaders:
                new[v] = c
            else:
                nb = graph.adj[v]
                new[v] = (est[v] + sum(est[u] for u in nb)) / (len(nb) + 1)
        est = new
        it += 1
        errs.append(max(abs(e - c) for e in est.values()))
    return it, errs


def euclidean_voronoi_connectivity(mesh, sites_xy):
    """Components per cell when faces go to the Euclidean-nearest site.

    Euclidean cells ignore the holes, so on a poriferous surface a cell may
    split into pieces on either side of an obstacle.
    """
    sites = np.asarray(sites_xy, dtype=complex)
    c = mesh.face_centroids()
    cz = c[:, 0] + 1j * c[:, 1]
    lab = np.argmin(np.abs(cz[:, None] - sites[None, :]), axis=1)
    out = []
    for i in range(len(sites)):
        fids = np.nonzero(lab == i)[0]
        if len(fids) == 0:
            out.append(0)
            continue
        nc, _ = csgraph.connected_components(face_adjacency(mesh.faces[fids]), directed=False)
        out.append(int(nc))
    return out


# ---------------------------------------------------------------- analyses


def select_anchor(phases, k, K_star):
    ref = 2 * math.pi * (k - 1) / K_star
    d = np.abs(np.mod(np.asarray(phases, dtype=float) - ref + math.pi, 2 * math.pi) - math.pi)
    return int(np.argmin(d))  # first minimum -> lower index


def max_agents(circles, beta, gamma, C_delta, eps_max, d_min=None):
    """floor(min(0.5 d_min / (r_max beta), gamma eps_max / (C_delta beta)))."""
    if beta <= 0:
        return AGENT_CAP
    radii = [c.radius for c in circles] if circles and hasattr(circles[0], "radius") else list(circles)
    r_max = max(radii) if radii else 0.0
    if d_min is None:
        d_min = min_obstacle_gap(circles)
    t1 = 0.5 * d_min / (r_max * beta) if r_max > 0 else math.inf
    t2 = gamma * eps_max / (C_delta * beta) if C_delta > 0 else math.inf
    n = min(t1, t2)
    return AGENT_CAP if not math.isfinite(n) else int(math.floor(n + 1e-9))


def min_obstacle_gap(circles):
    gaps = [1.0 - abs(c.center) - c.radius for c in circles]
    for i in range(len(circles)):
        for j in range(i + 1, len(circles)):
            gaps.append(abs(circles[i].center - circles[j].center) - circles[i].radius - circles[j].radius)
    return min(gaps) if gaps else math.inf


def iss_gamma(k_psi, omega_floor, N):
    return k_psi * omega_floor * P.cycle_lambda2(N)


@dataclass
class ISSReport:
    gamma: float
    C_delta: float
    steady_state: float
    slope: float
    slope_limit: float
    margin: float
    violations: list

    @property
    def passed(self):
        return not self.violations


def verify_iss(errors, dt, beta, omega_floor, k_psi, N, C_delta, tail=0.1):
    """Check ||e(t)|| <= ||e(0)|| exp(-gamma t) + C_delta beta / gamma along a trace."""
    e = np.asarray(errors, dtype=float)
    t = dt * np.arange(len(e))
    gamma = iss_gamma(k_psi, omega_floor, N)
    env = e[0] * np.exp(-gamma * t) + C_delta * beta / gamma
    excess = e - env
    viol = [int(i) for i in np.nonzero(excess > 1e-12)[0]]
    n_tail = max(1, int(len(e) * tail))
    ss = float(np.mean(e[-n_tail:]))
    slope = decay_slope(e, dt, ss)
    return ISSReport(gamma, C_delta, ss, slope, -0.5 * gamma, float(np.max(-excess)), viol)


def decay_slope(e, dt, floor):
    """Least-squares slope of log||e|| over the first half of the approach to ``floor``."""
    e = np.asarray(e, dtype=float)
    above = e > 2.0 * floor
    n_conv = int(np.argmin(above)) if not above.all() else len(e)
    half = max(2, n_conv // 2)
    seg = e[:half]
    seg = seg[seg > 0]
    if len(seg) < 2:
        return 0.0
    tt = dt * np.arange(len(seg))
    return float(np.polyfit(tt, np.log(seg), 1)[0])


def workload_metrics(m):
    m = np.asarray(m, dtype=float)
    mean = float(m.mean())
    return dict(
        mean=mean,
        imbalance=float(m.max() / m.min()) if m.min() > 0 else math.inf,
        rmse=float(np.sqrt(np.mean((m - mean) ** 2))),
        rel_rmse=float(np.sqrt(np.mean((m - mean) ** 2)) / mean) if mean > 0 else 0.0,
    )


# --------------------------------------------------------------------- run


@dataclass
class Trace:
    ids: list  # agent ids (1-based), column order
    rows: list = field(default_factory=list)  # dicts per step
    snapshots: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def column(self, key):
        return [r[key] for r in self.rows]


@dataclass
class RunState:
    phases: np.ndarray
    agents: list
    ids: list
    pinned: int = None


@dataclass
class KRun:
    k: int
    anchor: int
    J: float
    steps: int
    converged: bool
    converged_step: int
    trace: Trace
    state: RunState
    stats: dict


@dataclass
class RunResult:
    best_k: int
    J_star: float
    phases: np.ndarray
    positions: list
    per_k: list
    metrics: dict
    best: KRun
    fault_run: KRun = None
    messages: MessageLog = None


def initial_phases(N, rng):
    base = 2 * math.pi * np.arange(N) / N
    jit = rng.uniform(-0.25, 0.25, N) * (2 * math.pi / N)
    return P.unwrap_ordered(base + jit + rng.uniform(0, 2 * math.pi))


def place_agents(world: World, phases, r_a, radii=(0.5, 0.4, 0.6, 0.3, 0.7, 0.2, 0.8)):
    """One agent per sector on its bisector, at the first radius clearing obstacles by r_a."""
    N = len(phases)
    ok = lambda z, others: world.model.feasible(z, others) and np.all(clearance(z, world.metric) > r_a)
    nxt = np.append(phases[1:], phases[0] + 2 * math.pi)
    agents = []
    for i in range(N):
        mid = 0.5 * (phases[i] + nxt[i])
        for r in radii:
            q = r * complex(math.cos(mid), math.sin(mid))
            others = [a.image for a in agents]
            if ok(q, others) and world.mm.in_domain(q):
                try:
                    a = agent_at_image(world.mm, q, i + 1, r_a)
                except OutOfDomain:
                    continue
                if ok(a.image, others):
                    agents.append(a)
                    break
        else:
            raise TopologyViolation(f"no feasible start for agent {i + 1}")
    return agents


def set_anchor(phases, idx, ref):
    ph = phases.copy()
    delta = math.remainder(ref - ph[idx], 2 * math.pi)
    ph[idx] += delta
    shift = math.floor(ph[0] / (2 * math.pi)) * 2 * math.pi
    ph = ph - shift
    if not P.ordered(ph):
        raise StepRejected("anchor placement broke the phase ordering")
    return ph


def _partition_update(phases, m, cfg, pinned):
    dt = cfg.dt
    for _ in range(9):
        try:
            return P.partition_step(phases, m, cfg.k_psi, dt, pinned)
        except StepRejected:
            dt *= 0.5
    raise StepRejected("phase update rejected after 8 halvings")


def simulate(world: World, cfg: ScenarioConfig, state: RunState, faults=None, messages=None, k=0, horizon=None):
    """Evolve partition and agents from ``state``; returns (trace, final state, stats)."""
    model = world.model
    faults = dict(faults or {})
    last_fault = max(faults) if faults else -1
    end = max(cfg.max_steps, last_fault + cfg.max_steps if faults else 0)
    end = horizon if horizon is not None else end
    trace = Trace(list(state.ids))
    phases = state.phases.copy()
    agents = list(state.agents)
    ids = list(state.ids)
    pinned = state.pinned
    stats = dict(bar_violations=0, clearance_dev=0.0, infeasible_states=0, stuck=0, grad_unavailable=0,
                 mass_err=0.0, agent_steps=0, compute_time=0.0, j_increase=0.0)
    calm = 0
    prev_m = None
    converged_step = None
    graph = CommGraph.cycle(ids)
    for step in range(end + 1):
        if step in faults:
            gone = set(faults[step])
            keep = [i for i, a in enumerate(ids) if a not in gone]
            if len(keep) < 2:
                raise MissionAbort(f"only {len(keep)} agents survive the fault at step {step}")
            anchor_id = ids[pinned] if pinned is not None else None
            phases = phases[keep]
            agents = [agents[i] for i in keep]
            ids = [ids[i] for i in keep]
            pinned = ids.index(anchor_id) if anchor_id in ids else None
            graph = graph.remove(gone)
            trace.events.append(dict(step=step, kind="fault", removed=sorted(gone), survivors=list(ids)))
            calm, prev_m = 0, None
        t0 = time.perf_counter()
        bars = P.build_bars(phases, world.circles, cfg.beta)
        if P.bar_violations(bars, world.circles):
            stats["bar_violations"] += 1
        for i, j, kk, gap in P.same_obstacle_clearances(bars):
            want = world.circles[kk].radius * cfg.beta * abs(i - j)
            stats["clearance_dev"] = max(stats["clearance_dev"], abs(gap - want))
        m_nom = P.sector_workloads(phases, world.table)
        m_act, _ = P.actual_workloads(phases, bars, world.circles, world.table, world.profiles)
        stats["mass_err"] = max(stats["mass_err"], abs(m_act.sum() - world.total_mass) / world.total_mass)
        if messages is not None:
            for a, b in zip(ids, ids[1:] + ids[:1]):
                messages.send(a, b, "workload")
                messages.send(b, a, "phase")
        sectors = model.sector_faces(phases, bars, world.circles)
        start_imgs = [a.image for a in agents]
        new_agents, unorm, costs = [], [], []
        for i, a in enumerate(agents):
            others_old = start_imgs[:i] + start_imgs[i + 1:]
            others_mix = [x.image for x in new_agents] + start_imgs[i + 1:]
            before = model.agent_cost(a.point, sectors[i])
            applied = 0.0
            nxt, after = a, before
            try:
                g = riemannian_gradient(model, a, sectors[i], others_old)
                u = control_input(g, cfg.k_p, cfg.v_max, cfg.dt, model.lam(a.face, a.bary))
                try:
                    out = integrate_step(model, a, u, cfg.dt, sectors[i], others_mix, cost_before=before)
                    nxt, after = out.agent, out.cost_after
                    applied = float(np.linalg.norm(u)) * out.dt / cfg.dt
                except StuckAgent:
                    stats["stuck"] += 1
            except GradientUnavailable:
                stats["grad_unavailable"] += 1
            if not model.feasible(nxt.image, [x.image for x in new_agents] + start_imgs[i + 1:]):
                stats["infeasible_states"] += 1
            stats["j_increase"] = max(stats["j_increase"], after - before)
            new_agents.append(nxt)
            unorm.append(applied)
            costs.append(after)
        agents = new_agents
        stats["agent_steps"] += len(agents)
        J = float(np.sum(costs))
        row = dict(step=step, J=J, ids=list(ids), m=m_act.copy(), m_nom=m_nom.copy(), psi=P.wrap(phases), u=np.array(unorm))
        trace.rows.append(row)
        if cfg.snapshot_every and step % cfg.snapshot_every == 0:
            trace.snapshots.append(dict(step=step, phases=P.wrap(phases).tolist(), ids=list(ids),
                                        agents=[[a.image.real, a.image.imag] for a in agents],
                                        bars=[[[z.real, z.imag] for z in b.points] for b in bars]))
        if messages is not None:
            messages.end_step()
        # convergence on measured workloads and applied controls
        dm = np.inf if prev_m is None else float(np.max(np.abs(m_act - prev_m)))
        prev_m = m_act
        calm = calm + 1 if (dm < cfg.conv_tol and max(unorm) < cfg.conv_tol) else 0
        if not cfg.freeze_partition:
            phases = _partition_update(phases, m_nom, cfg, pinned)
        stats["compute_time"] += time.perf_counter() - t0
        if calm >= cfg.conv_window and step > last_fault:
            converged_step = step
            break
    stats["converged_step"] = converged_step
    return trace, RunState(phases, agents, ids, pinned), stats


def start_state(world, cfg, k, rng_phases):
    phases = rng_phases.copy()
    pinned = None
    anchor = 0
    if k is not None:
        anchor = select_anchor(P.wrap(phases), k, cfg.K_star)
        phases = set_anchor(phases, anchor, 2 * math.pi * (k - 1) / cfg.K_star)
        pinned = anchor if cfg.pin_anchor else None
    P.check_buffers(world.circles, len(phases), cfg.beta)
    agents = place_agents(world, phases, cfg.r_a)
    return RunState(phases, agents, [a.id for a in agents], pinned), anchor


def run_coverage(cfg: ScenarioConfig, world: World = None, k_values=None, out_dir=None):
    """Anchor sweep over k = 1..K*, then replay the best k with the fault schedule."""
    world = world or build_world(cfg)
    rng = np.random.default_rng(cfg.seed)
    ph0 = initial_phases(cfg.N, rng)
    ks = list(k_values) if k_values is not None else list(range(1, cfg.K_star + 1))
    messages = MessageLog()
    per_k = []
    for k in ks:
        try:
            st, anchor = start_state(world, cfg, k, ph0)
            trace, final, stats = simulate(world, cfg, st, None, messages, k)
        except Exception as exc:
            exc.args = (f"[k={k}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        last = trace.rows[-1]
        per_k.append(KRun(k, anchor + 1, last["J"], last["step"], stats["converged_step"] is not None,
                          stats["converged_step"], trace, final, stats))
    best = min(per_k, key=lambda r: (r.J, r.k))
    if not best.converged and cfg.settle_steps > cfg.max_steps:
        # let the chosen configuration finish settling past the sweep horizon
        st, _ = start_state(world, cfg, best.k, ph0)
        trace, final, stats = simulate(world, cfg, st, None, messages, best.k, horizon=cfg.settle_steps)
        last = trace.rows[-1]
        best = KRun(best.k, best.anchor, last["J"], last["step"], stats["converged_step"] is not None,
                    stats["converged_step"], trace, final, stats)
    fault_run = None
    if cfg.faults:
        st, _ = start_state(world, cfg, best.k, ph0)
        trace, final, stats = simulate(world, cfg, st, cfg.faults, messages, best.k)
        last = trace.rows[-1]
        fault_run = KRun(best.k, best.anchor, last["J"], last["step"], stats["converged_step"] is not None,
                         stats["converged_step"], trace, final, stats)
    final_m = best.trace.rows[-1]["m"]
    metrics = workload_metrics(final_m)
    total_steps = sum(r.stats["agent_steps"] for r in per_k)
    metrics.update(
        iterations=best.steps,
        converged=best.converged,
        t_avg=sum(r.stats["compute_time"] for r in per_k) / max(total_steps, 1),
        total_mass=world.total_mass,
    )
    if fault_run is not None:
        pre = _pre_fault_row(fault_run.trace, min(cfg.faults))
        post = fault_run.trace.rows[-1]
        metrics["fault"] = dict(
            pre_mean=float(np.mean(pre["m"])),
            post_mean=float(np.mean(post["m"])),
            ratio=float(np.mean(post["m"]) / np.mean(pre["m"])),
            post=workload_metrics(post["m"]),
            converged=fault_run.converged,
        )
    res = RunResult(best.k, best.J, P.wrap(best.state.phases), [a.image for a in best.state.agents],
                    per_k, metrics, best, fault_run, messages)
    if out_dir is not None:
        write_outputs(res, cfg, world, out_dir)
    return res


def _pre_fault_row(trace, t):
    rows = [r for r in trace.rows if r["step"] < t]
    return rows[-1]


# ------------------------------------------------------------------ output


def trace_csv(trace: Trace):
    ids = trace.ids
    head = ["step", "J"] + [f"m_{i}" for i in ids] + [f"psi_{i}" for i in ids] + [f"u_{i}" for i in ids]
    lines = [",".join(head)]
    for r in trace.rows:
        pos = {a: j for j, a in enumerate(r["ids"])}

        def col(arr):
            return [fmt(arr[pos[i]]) if i in pos else "" for i in ids]

        lines.append(",".join([str(r["step"]), fmt(r["J"])] + col(r["m"]) + col(r["psi"]) + col(r["u"])))
    return "\n".join(lines) + "\n"


def _round(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, (np.floating,)):
        return float(fmt(float(obj)))
    if isinstance(obj, (complex, np.complexfloating)):
        return [_round(obj.real), _round(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    return obj


def summary_dict(res: RunResult, cfg: ScenarioConfig, world: World):
    best = res.best
    out = dict(
        best_k=res.best_k,
        J_star=res.J_star,
        phases=res.phases,
        agents=[[z.real, z.imag] for z in res.positions],
        metrics={k: v for k, v in res.metrics.items() if k != "t_avg"},
        t_avg_seconds=res.metrics["t_avg"],
        per_k=[dict(k=r.k, anchor=r.anchor, J=r.J, steps=r.steps, converged=r.converged) for r in res.per_k],
        safety=dict(
            bar_violation_steps=sum(r.stats["bar_violations"] for r in res.per_k),
            infeasible_states=sum(r.stats["infeasible_states"] for r in res.per_k),
            max_clearance_deviation=max(r.stats["clearance_dev"] for r in res.per_k),
            max_mass_error=max(r.stats["mass_err"] for r in res.per_k),
        ),
        messages=dict(total=res.messages.total, per_kind=res.messages.per_kind),
        circles=[[c.center.real, c.center.imag, c.radius] for c in world.circles],
        total_mass=world.total_mass,
    )
    if res.fault_run is not None:
        out["fault_events"] = res.fault_run.trace.events
    return _round(out)


def write_outputs(res: RunResult, cfg: ScenarioConfig, world: World, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(trace_csv(res.best.trace))
    with open(out / "sweep.csv", "w") as fh:
        fh.write("k,anchor,J,steps,converged\n")
        for r in res.per_k:
            fh.write(f"{r.k},{r.anchor},{fmt(r.J)},{r.steps},{int(r.converged)}\n")
    if res.fault_run is not None:
        (out / "fault_metrics.csv").write_text(trace_csv(res.fault_run.trace))
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    runs = [("best", res.best)] + ([("fault", res.fault_run)] if res.fault_run else [])
    for tag, r in runs:
        for s in r.trace.snapshots:
            (snap / f"{tag}_step{s['step']:05d}.json").write_text(json.dumps(_round(s)))
    import yaml

    with open(out / "summary.yaml", "w") as fh:
        yaml.safe_dump(summary_dict(res, cfg, world), fh, sort_keys=False)
    cfg.dump(out / "config_used.yaml")
    return out
