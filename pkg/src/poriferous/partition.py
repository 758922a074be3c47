"""Sectorial partition of the ball world.

Sectors are bounded by bars leaving the origin at phases psi_1 < ... < psi_N.
A bar that meets the buffer circle of obstacle k (radius r_k (1 + i beta)
for the i-th bar) leaves its ray there and follows the buffer arc on the
counter-clockwise side of the ray.  Because higher-ranked bars use larger
buffers and bulge away from lower-ranked ones, bars bypassing the same
obstacle stay nested with radial clearance r_k beta |i - j|.

Ranks are counted per obstacle, counter-clockwise from a cut ray that
clears the obstacle's largest buffer.  Away from the cut they equal the
agent order; across it (bars N and 1 on one obstacle) the agent order
would put the larger buffer on the wrong side and the bars would cross.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepRejected, TopologyViolation
from .geometry import Circle, arc_polyline, line_circle_intersect

TWO_PI = 2 * math.pi


# ------------------------------------------------------- marginal density


def marginal_density(sampler, theta, Q=64, circles=()):
    """omega(theta) = int_0^1 rho(r, theta) r dr by Q-point midpoint rule.

    ``sampler`` maps complex points to density values.  Cells cut by one of
    ``circles`` are weighted by the exact fraction of their radial extent
    lying outside it, so obstacle edges do not cost a full cell of error.
    """
    if Q < 2:
        raise ValueError("need Q >= 2")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    r = (np.arange(Q) + 0.5) / Q
    b = np.exp(1j * theta)
    pts = r[None, :] * b[:, None]
    vals = np.asarray(sampler(pts), dtype=float).reshape(pts.shape)
    frac = np.ones(pts.shape)
    lo_edge, hi_edge = np.arange(Q) / Q, np.arange(1, Q + 1) / Q
    for c in circles:
        # ray chord: xi^2 - 2 Re(conj(b) o) xi + |o|^2 - r^2 = 0
        p = (np.conj(b) * c.center).real
        disc = p * p - (abs(c.center) ** 2 - c.radius**2)
        sq = np.sqrt(np.maximum(disc, 0.0))
        a_in = np.where(disc > 0, p - sq, 0.0)
        a_out = np.where(disc > 0, p + sq, 0.0)
        cover = np.clip(np.minimum(hi_edge[None], a_out[:, None]) - np.maximum(lo_edge[None], a_in[:, None]), 0, None)
        frac -= cover * Q
    frac = np.clip(frac, 0.0, 1.0)
    return np.sum(vals * frac * r[None, :], axis=1) / Q


class MarginalTable:
    """omega on a uniform angular grid with its periodic cumulative integral."""

    def __init__(self, sampler, circles=(), M=1024, Q=64, total_mass=None, tol=0.01, max_refine=2):
        self.sampler = sampler
        self.circles = tuple(circles)
        for _ in range(max_refine + 1):
            self._build(M, Q)
            if total_mass is None or abs(self.total - total_mass) <= tol * abs(total_mass):
                break
            M, Q = 2 * M, 2 * Q
        self.M, self.Q = M, Q

    def _build(self, M, Q):
        self.theta = TWO_PI * np.arange(M) / M
        self.omega = marginal_density(self.sampler, self.theta, Q, self.circles)
        h = TWO_PI / M
        # trapezoid on the periodic grid; W[k] = integral from 0 to theta_k
        seg = 0.5 * h * (self.omega + np.roll(self.omega, -1))
        self.W = np.concatenate([[0.0], np.cumsum(seg)])
        self.total = float(self.W[-1])
        self.h = h

    def omega_at(self, psi):
        psi = np.mod(np.asarray(psi, dtype=float), TWO_PI)
        x = psi / self.h
        k = np.floor(x).astype(int) % len(self.omega)
        t = x - np.floor(x)
        return (1 - t) * self.omega[k] + t * self.omega[(k + 1) % len(self.omega)]

    def cumulative(self, psi):
        """Integral of omega from 0 to psi (psi may exceed 2 pi)."""
        psi = np.asarray(psi, dtype=float)
        turns = np.floor(psi / TWO_PI)
        p = psi - turns * TWO_PI
        x = p / self.h
        k = np.minimum(np.floor(x).astype(int), len(self.omega) - 1)
        t = x - k
        w0 = self.omega[k]
        w1 = self.omega[(k + 1) % len(self.omega)]
        part = self.h * (t * w0 + 0.5 * t * t * (w1 - w0))
        return turns * self.total + self.W[k] + part

    @property
    def floor(self):
        return float(np.min(self.omega))


def sector_workloads(phases, table: MarginalTable):
    """Nominal workloads m_i = int_{psi_i}^{psi_{i+1}} omega (cyclic)."""
    psi = np.asarray(phases, dtype=float)
    nxt = np.roll(psi, -1).copy()
    nxt[-1] = psi[0] + TWO_PI
    # unwrap so each sector has its non-negative angular width
    width = np.mod(nxt - psi, TWO_PI)
    if len(psi) == 1:
        width = np.array([TWO_PI])
    return table.cumulative(psi + width) - table.cumulative(psi)


def sector_workload(phases, i, table: MarginalTable):
    return float(sector_workloads(phases, table)[i])


# -------------------------------------------------------------- dynamics


def ordered(phases):
    """True when the unwrapped phases are strictly increasing within one turn."""
    psi = np.asarray(phases, dtype=float)
    if len(psi) < 2:
        return True
    gaps = np.diff(np.concatenate([psi, [psi[0] + TWO_PI]]))
    return bool(np.all(gaps > 0))


def phase_rates(workloads, k_psi):
    m = np.asarray(workloads, dtype=float)
    return k_psi * (m - np.roll(m, 1))


def partition_step(phases, workloads, k_psi, dt, pinned=None):
    """Explicit Euler step of psi_i' = k_psi (m_i - m_{i-1}), m_0 = m_N.

    Phases are kept unwrapped (psi_1 in [0, 2 pi), increasing); use
    :func:`wrap` for the reported values.  ``pinned`` freezes one agent.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rate = phase_rates(workloads, k_psi)
    if pinned is not None:
        rate[pinned] = 0.0
    new = np.asarray(phases, dtype=float) + dt * rate
    if not ordered(new):
        raise StepRejected("phase ordering violated")
    shift = math.floor(new[0] / TWO_PI) * TWO_PI
    return new - shift


def wrap(phases):
    return np.mod(np.asarray(phases, dtype=float), TWO_PI)


def unwrap_ordered(phases):
    """Turn phases sorted by agent order into an increasing unwrapped sequence."""
    psi = np.mod(np.asarray(phases, dtype=float), TWO_PI)
    out = psi.copy()
    for i in range(1, len(out)):
        while out[i] <= out[i - 1]:
            out[i] += TWO_PI
    return out


# -------------------------------------------------------------- safe bars


@dataclass
class SafeBar:
    index: int  # 1-based rank used for the buffer radius
    psi: float
    points: np.ndarray
    arcs: list = field(default_factory=list)  # dicts: obstacle, radius, xi_in, xi_out, psi_in, psi_out

    def obstacles(self):
        return [a["obstacle"] for a in self.arcs]


def buffer_circles(circles, i, beta):
    return [Circle(c.center, c.radius * (1 + i * beta)) for c in circles]


def check_buffers(circles, i, beta):
    buf = buffer_circles(circles, i, beta)
    for k, b in enumerate(buf):
        if abs(b.center) + b.radius >= 1.0:
            raise TopologyViolation(f"buffer circle of obstacle {k} for bar {i} leaves the disk")
        if abs(b.center) <= b.radius:
            raise TopologyViolation(f"buffer circle of obstacle {k} for bar {i} covers the origin")
        for l in range(k + 1, len(buf)):
            if abs(b.center - buf[l].center) <= b.radius + buf[l].radius:
                raise TopologyViolation(f"buffer circles {k} and {l} overlap for bar {i}")
    return buf


def obstacle_cut(circle, beta, N):
    """Angle of a ray just clockwise of the largest buffer of ``circle``."""
    d = abs(circle.center)
    half = math.asin(min(1.0, circle.radius * (1 + N * beta) / d))
    return math.atan2(circle.center.imag, circle.center.real) - half - 1e-9


def bar_ranks(phases, circles, beta):
    """ranks[k][i]: 1-based position of bar i counter-clockwise from obstacle k's cut."""
    psi = np.asarray(phases, dtype=float)
    N = len(psi)
    out = np.zeros((len(circles), N), dtype=int)
    for k, c in enumerate(circles):
        order = np.argsort(np.mod(psi - obstacle_cut(c, beta, N), TWO_PI), kind="stable")
        out[k, order] = np.arange(1, N + 1)
    return out


def build_safe_bar(i, psi, circles, beta, samples=33, ranks=None):
    """Polyline from the origin to the unit circle at angle psi avoiding obstacles.

    ``ranks[k]`` sets the buffer rank on obstacle k (default ``i`` everywhere).
    """
    ranks = [i] * len(circles) if ranks is None else [int(r) for r in ranks]
    check_buffers(circles, max(ranks, default=i), beta)
    buf = [Circle(c.center, c.radius * (1 + r * beta)) for c, r in zip(circles, ranks)]
    b = complex(math.cos(psi), math.sin(psi))
    hits = []
    for k, c in enumerate(buf):
        x = line_circle_intersect(b, c)
        if x is not None and x[1] - x[0] > 0:
            hits.append((x[0], x[1], k, c))
    hits.sort()
    pts = [0j]
    arcs = []
    for xi_in, xi_out, k, c in hits:
        e_in, e_out = xi_in * b, xi_out * b
        a_in = math.atan2((e_in - c.center).imag, (e_in - c.center).real)
        a_out = math.atan2((e_out - c.center).imag, (e_out - c.center).real)
        arc = arc_polyline(c, a_in, a_out, samples, ccw=False)
        mid = arc[len(arc) // 2]
        if (np.conj(b) * mid).imag <= 0:  # bulge must sit on the counter-clockwise side
            arc = arc_polyline(c, a_in, a_out, samples, ccw=True)
        pts.extend(arc.tolist())
        arcs.append(dict(obstacle=k, rank=ranks[k], radius=c.radius, xi_in=xi_in, xi_out=xi_out, psi_in=a_in, psi_out=a_out))
    pts.append(b)
    return SafeBar(i, float(psi), np.array(pts, dtype=complex), arcs)


def build_bars(phases, circles, beta, samples=33):
    N = len(phases)
    check_buffers(circles, N, beta)
    R = bar_ranks(phases, circles, beta)
    return [build_safe_bar(i + 1, p, circles, beta, samples, R[:, i]) for i, p in enumerate(phases)]


# --------------------------------------------------------- safety checks


def _seg_point_dist(a, b, p):
    d = b - a
    L2 = np.abs(d) ** 2
    t = np.clip(((p - a) * np.conj(d)).real / np.where(L2 > 0, L2, 1.0), 0, 1)
    return np.abs(a + t * d - p)


def _segments_intersect(a1, a2, b1, b2):
    """Vectorized proper-or-touching intersection test between segment sets."""
    def cross(u, v):
        return (np.conj(u) * v).imag

    r = a2 - a1
    s = b2 - b1
    rxs = cross(r[:, None], s[None, :])
    qp = b1[None, :] - a1[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(qp, s[None, :]) / rxs
        u = cross(qp, r[:, None]) / rxs
    hit = (rxs != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return hit


def bar_violations(bars, circles):
    """Segment-level check: bars must avoid obstacle disks and each other.

    The shared origin is excluded from the bar-bar test.  Returns a list of
    human-readable violations (empty when safe).
    """
    out = []
    for bar in bars:
        a, b = bar.points[:-1], bar.points[1:]
        for k, c in enumerate(circles):
            d = _seg_point_dist(a, b, c.center)
            if np.any(d <= c.radius):
                out.append(f"bar {bar.index} enters obstacle {k}")
    for x in range(len(bars)):
        for y in range(x + 1, len(bars)):
            P, R = bars[x].points, bars[y].points
            hit = _segments_intersect(P[:-1], P[1:], R[:-1], R[1:])
            hit[0, 0] = False  # both first segments start at the origin
            # first segments may still touch the other's first segment only at 0
            if np.any(hit):
                out.append(f"bars {bars[x].index} and {bars[y].index} intersect")
    return out


def same_obstacle_clearances(bars):
    """(rank_i, rank_j, k, radial gap) for bars bypassing the same obstacle k.

    The expected gap is r_k beta |rank_i - rank_j|.
    """
    rows = []
    for x in range(len(bars)):
        for y in range(x + 1, len(bars)):
            for ax in bars[x].arcs:
                for ay in bars[y].arcs:
                    if ax["obstacle"] == ay["obstacle"]:
                        rows.append((ax["rank"], ay["rank"], ax["obstacle"], abs(ax["radius"] - ay["radius"])))
    return rows


# -------------------------------------------------------- actual workloads


def ring_mass_left(center, r0, r1, direction, profile, n=256):
    """Mass of the ring r0 < |q - center| < r1 on the left of the line through 0 along direction.

    ``profile(phi)`` is the density at angle phi around the center; the
    radial fraction on the left side is computed exactly per angle.
    """
    phi = TWO_PI * (np.arange(n) + 0.5) / n
    b = complex(direction)
    c0 = (np.conj(b) * center).imag
    c1 = (np.conj(b) * np.exp(1j * phi)).imag
    # left iff c0 + rho * c1 > 0 ; solve for the admissible rho interval in [r0, r1]
    lo = np.full(n, r0)
    hi = np.full(n, r1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = -c0 / c1
    pos = c1 > 0
    neg = c1 < 0
    lo = np.where(pos, np.maximum(lo, rc), lo)
    hi = np.where(neg, np.minimum(hi, rc), hi)
    zero = c1 == 0
    hi = np.where(zero & (c0 <= 0), lo, hi)
    hi = np.maximum(hi, lo)
    area = 0.5 * (hi**2 - lo**2)
    return float(np.sum(profile(phi) * area) * TWO_PI / n)


def bar_corrections(bars, circles, profiles):
    """D[j] = mass a bar moves from the sector on its left to the one on its right."""
    D = np.zeros(len(bars))
    for j, bar in enumerate(bars):
        b = complex(math.cos(bar.psi), math.sin(bar.psi))
        for a in bar.arcs:
            k = a["obstacle"]
            c = circles[k]
            D[j] += ring_mass_left(c.center, c.radius, a["radius"], b, profiles[k])
    return D


def actual_workloads(phases, bars, circles, table: MarginalTable, profiles):
    """Workloads of the sectors bounded by the safe bars.

    Sector i lies between bar i and bar i+1; bar i hands its bulge to
    sector i-1, and sector i receives the bulge of bar i+1.
    """
    m = sector_workloads(phases, table)
    D = bar_corrections(bars, circles, profiles)
    return m - D + np.roll(D, -1), D


def uniform_profiles(circles, value=1.0):
    return [(lambda phi, v=value: np.full_like(phi, v)) for _ in circles]


def image_profiles(density, circles):
    """Density along each obstacle loop, interpolated periodically in angle."""
    out = []
    for k in range(len(circles)):
        ang, val = density.boundary_profile(k)
        ang_ext = np.concatenate([ang - TWO_PI, ang, ang + TWO_PI])
        val_ext = np.concatenate([val, val, val])
        out.append(lambda phi, a=ang_ext, v=val_ext: np.interp(np.mod(phi + math.pi, TWO_PI) - math.pi, a, v))
    return out


# ------------------------------------------------------------ error bound


def workload_error_bound(beta, N, radii, rho_sup, sweep=math.pi):
    """beta * N * C_g * sup(rho) with C_g = sum_k r_k^2 * sweep."""
    Cg = float(np.sum(np.asarray(radii, dtype=float) ** 2)) * sweep
    return beta * N * Cg * rho_sup


# ----------------------------------------------------------- spectral tools


def weighted_laplacian(omega):
    """Cycle Laplacian with x^T L x = sum_k omega_k (x_k - x_{k-1})^2.

    Edge (k-1, k) carries omega_k; the closing edge (N, 1) carries omega_1.
    Returns (L, lambda_2).
    """
    w = np.asarray(omega, dtype=float)
    N = len(w)
    L = np.zeros((N, N))
    for k in range(N):
        j = (k - 1) % N
        L[k, k] += w[k]
        L[j, j] += w[k]
        L[k, j] -= w[k]
        L[j, k] -= w[k]
    ev = np.linalg.eigvalsh(L)
    return L, float(ev[1]) if N > 1 else 0.0


def cycle_lambda2(N):
    return 2.0 * (1.0 - math.cos(TWO_PI / N))
