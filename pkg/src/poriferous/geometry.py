"""Planar primitives on the complex plane.

Points of the plane are plain Python/numpy complex numbers throughout the
package; arrays of points are ``complex128`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, DegenerateTransform, OutOfDomain

MOBIUS_TOL = 1e-12


@dataclass(frozen=True)
class MobiusParams:
    """Disk automorphism ``z -> exp(i phi) (z - a) / (1 - conj(a) z)``."""

    phi: float = 0.0
    a: complex = 0j

    def __post_init__(self):
        if not abs(self.a) < 1.0:
            raise DegenerateTransform(f"|a| = {abs(self.a)} must be < 1")

    def inverse(self) -> "MobiusParams":
        # inverse of e^{i phi}(z-a)/(1-a* z) is e^{-i phi}(w + a e^{i phi})/(1 + conj(a e^{i phi}) w)
        b = -self.a * np.exp(1j * self.phi)
        return MobiusParams(float((-self.phi) % (2 * math.pi)), complex(b))

    def matrix(self):
        e = np.exp(1j * self.phi)
        return np.array([[e, -e * self.a], [-np.conj(self.a), 1.0]], dtype=complex)

    @classmethod
    def from_matrix(cls, m):
        A, B, C, D = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        return cls(float(np.angle(A / D)) % (2 * math.pi), complex(-B / A))

    def compose(self, inner: "MobiusParams") -> "MobiusParams":
        """Parameters of ``self o inner``."""
        return MobiusParams.from_matrix(self.matrix() @ inner.matrix())


def mobius_apply(z, m):
    """Apply a disk automorphism; works on scalars and complex arrays."""
    z = np.asarray(z, dtype=complex)
    den = 1.0 - np.conj(m.a) * z
    if np.any(np.abs(den) < MOBIUS_TOL):
        raise DegenerateTransform("Mobius denominator vanishes")
    out = np.exp(1j * m.phi) * (z - m.a) / den
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class SimilarityParams:
    alpha: complex = 1.0 + 0j
    gamma: complex = 0j

    def __post_init__(self):
        if self.alpha == 0:
            raise DegenerateTransform("similarity scale alpha must be non-zero")

    def inverse(self) -> "SimilarityParams":
        return SimilarityParams(1.0 / self.alpha, -self.gamma / self.alpha)


def similarity_apply(z, t: SimilarityParams):
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    out = t.alpha * z + t.gamma
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class Circle:
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")

    def contains(self, z, strict=True):
        d = np.abs(np.asarray(z, dtype=complex) - self.center)
        return d < self.radius if strict else d <= self.radius


def fit_circle(points) -> Circle:
    """Algebraic (Kasa) least-squares circle through ``points``."""
    z = np.asarray(points, dtype=complex).ravel()
    if z.size < 3:
        raise DegenerateFit("need at least 3 points")
    x, y = z.real, z.imag
    # x^2 + y^2 + D x + E y + F = 0
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    scale = max(np.ptp(x), np.ptp(y))
    if scale == 0:
        raise DegenerateFit("coincident points")
    sv = np.linalg.svd(np.column_stack([x - x.mean(), y - y.mean()]) / scale, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise DegenerateFit("collinear points")
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    D, E, F = sol
    c = complex(-D / 2, -E / 2)
    r2 = abs(c) ** 2 - F
    if r2 <= 0:
        raise DegenerateFit("fit produced imaginary radius")
    return Circle(c, math.sqrt(r2))


def line_circle_intersect(direction: complex, circle: Circle):
    """Intersect the segment ``xi * direction, xi in [0, 1]`` with a circle.

    Returns ``(xi_in, xi_out)`` clipped to [0, 1], or ``None`` when the ray
    misses the circle or both roots fall outside the segment.
    """
    b = complex(direction)
    o = complex(circle.center)
    # |b|^2 xi^2 - 2 (b . o) xi + (|o|^2 - r^2) = 0
    qa = abs(b) ** 2
    qb = -2.0 * (b.real * o.real + b.imag * o.imag)
    qc = abs(o) ** 2 - circle.radius**2
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    if qb <= 0:
        q = -0.5 * (qb - sq)
    else:
        q = -0.5 * (qb + sq)
    r1 = q / qa
    r2 = qc / q if q != 0 else -qb / (2 * qa)
    lo, hi = min(r1, r2), max(r1, r2)
    if hi < 0 or lo > 1:
        return None
    return (min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0))


def arc_polyline(circle: Circle, psi_in: float, psi_out: float, samples: int, ccw=None):
    """Sample ``samples`` points on ``circle`` from angle psi_in to psi_out.

    By default the shorter sweep is taken (exactly pi resolves
    counter-clockwise). ``ccw=True/False`` forces the sweep direction.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    two_pi = 2 * math.pi
    ccw_sweep = (psi_out - psi_in) % two_pi
    if ccw is None:
        if ccw_sweep <= math.pi + 1e-15:
            sweep = ccw_sweep
        else:
            sweep = ccw_sweep - two_pi
    elif ccw:
        sweep = ccw_sweep
    else:
        sweep = ccw_sweep - two_pi if ccw_sweep > 0 else 0.0
    t = psi_in + sweep * np.arange(samples) / (samples - 1)
    pts = circle.center + circle.radius * np.exp(1j * t)
    pts[0] = circle.center + circle.radius * np.exp(1j * psi_in)
    pts[-1] = circle.center + circle.radius * np.exp(1j * psi_out)
    return pts


def barycentric(q, a, b, c):
    """Barycentric coordinates of planar points ``q`` in triangles (a, b, c).

    All arguments broadcast; returns an array with a trailing axis of 3.
    """
    v0 = b - a
    v1 = c - a
    v2 = q - a
    den = v0.real * v1.imag - v0.imag * v1.real
    l1 = (v2.real * v1.imag - v2.imag * v1.real) / den
    l2 = (v0.real * v2.imag - v0.imag * v2.real) / den
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


class PlanarLocator:
    """Point location in a planar triangulation.

    Small meshes are scanned face by face; large ones (or batch queries)
    go through a uniform bucket grid over face bounding boxes.
    """

    BRUTE_FORCE_LIMIT = 5000

    def __init__(self, points, faces, tol=1e-9):
        self.points = np.asarray(points, dtype=complex)
        self.faces = np.asarray(faces, dtype=np.int64)
        self.tol = tol
        tri = self.points[self.faces]
        self._a, self._b, self._c = tri[:, 0], tri[:, 1], tri[:, 2]
        self._build_grid(tri)

    def _build_grid(self, tri):
        xs, ys = tri.real, tri.imag
        self.lo = complex(xs.min(), ys.min())
        span = max(xs.max() - xs.min(), ys.max() - ys.min(), 1e-12)
        nf = len(self.faces)
        self.res = max(1, int(math.sqrt(nf) / 1.5))
        self.cell = span / self.res * (1 + 1e-9)
        fx0 = np.floor((xs.min(1) - self.lo.real) / self.cell).astype(int)
        fx1 = np.floor((xs.max(1) - self.lo.real) / self.cell).astype(int)
        fy0 = np.floor((ys.min(1) - self.lo.imag) / self.cell).astype(int)
        fy1 = np.floor((ys.max(1) - self.lo.imag) / self.cell).astype(int)
        buckets = {}
        for f in range(nf):
            for i in range(max(fx0[f], 0), min(fx1[f], self.res - 1) + 1):
                for j in range(max(fy0[f], 0), min(fy1[f], self.res - 1) + 1):
                    buckets.setdefault(i * self.res + j, []).append(f)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def _candidates(self, q):
        i = int(math.floor((q.real - self.lo.real) / self.cell))
        j = int(math.floor((q.imag - self.lo.imag) / self.cell))
        if not (0 <= i < self.res and 0 <= j < self.res):
            # the tolerance band may straddle the grid edge
            i = min(max(i, 0), self.res - 1)
            j = min(max(j, 0), self.res - 1)
        return self.buckets.get(i * self.res + j, np.empty(0, dtype=np.int64))

    def locate(self, q):
        """Return ``(face, bary)`` for one point or raise :class:`OutOfDomain`."""
        q = complex(q)
        if len(self.faces) < self.BRUTE_FORCE_LIMIT:
            cand = np.arange(len(self.faces))
        else:
            cand = self._candidates(q)
        if cand.size:
            bc = barycentric(q, self._a[cand], self._b[cand], self._c[cand])
            worst = bc.min(axis=1)
            k = int(np.argmax(worst))
            if worst[k] >= -self.tol:
                return int(cand[k]), bc[k]
        raise OutOfDomain(f"point {q} lies outside the triangulation")

    def locate_many(self, qs):
        """Vectorised location; faces are -1 where a point is outside."""
        qs = np.asarray(qs, dtype=complex).ravel()
        faces = np.full(qs.shape, -1, dtype=np.int64)
        bary = np.zeros(qs.shape + (3,))
        best = np.full(qs.shape, -np.inf)
        ii = np.floor((qs.real - self.lo.real) / self.cell).astype(np.int64)
        jj = np.floor((qs.imag - self.lo.imag) / self.cell).astype(np.int64)
        inside = (ii >= 0) & (ii < self.res) & (jj >= 0) & (jj < self.res)
        key = np.where(inside, ii * self.res + jj, -1)
        for k in np.unique(key[inside]):
            cand = self.buckets.get(int(k))
            if cand is None:
                continue
            sel = np.nonzero(key == k)[0]
            bc = barycentric(
                qs[sel, None], self._a[cand][None, :], self._b[cand][None, :], self._c[cand][None, :]
            )
            worst = bc.min(axis=2)
            arg = np.argmax(worst, axis=1)
            w = worst[np.arange(len(sel)), arg]
            ok = w >= -self.tol
            faces[sel[ok]] = cand[arg[ok]]
            bary[sel[ok]] = bc[np.arange(len(sel))[ok], arg[ok]]
            best[sel[ok]] = w[ok]
        return faces, bary


def point_locate(points, faces, q):
    """One-shot point location in the planar triangulation (points, faces)."""
    return PlanarLocator(points, faces).locate(q)
