"""Projective primitives on the image plane.

Ellipses (parametric and implicit), homogeneous lines and points, tangents
from a point, common external tangents of two ellipses and the cross-ratio
of four collinear points.

Conventions: image coordinates have x to the right and y down, and integer
coordinates are pixel centres. Homogeneous lines ``(l1, l2, l3)`` describe
``l1*x + l2*y + l3 = 0`` and are stored with ``l1**2 + l2**2 == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    CoincidentAnchors,
    DegenerateFit,
    EllipsesOverlap,
    NoConvergence,
    NoSolutionInSegment,
    PointInsideEllipse,
    PointOnEllipse,
    TooFewPoints,
)

# |w| below this fraction of |(x, y)| is treated as a point at infinity.
_INFINITY_REL = 1e-12
_TWO_PI = 2.0 * math.pi


class HPoint(NamedTuple):
    """Homogeneous image point; ``w == 0`` encodes a point at infinity."""

    x: float
    y: float
    w: float

    @classmethod
    def from_vector(cls, v) -> HPoint:
        """Canonical form: ``w == 1`` for finite points, unit ``(x, y)`` otherwise."""
        v = np.asarray(v, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)) or not np.any(v):
            raise ValueError(f"invalid homogeneous point {v!r}")
        norm_xy = math.hypot(v[0], v[1])
        if abs(v[2]) <= _INFINITY_REL * norm_xy:
            x, y = v[0] / norm_xy, v[1] / norm_xy
            if x < 0 or (x == 0 and y < 0):
                x, y = -x, -y
            return cls(x + 0.0, y + 0.0, 0.0)
        return cls(v[0] / v[2], v[1] / v[2], 1.0)

    @classmethod
    def at(cls, x: float, y: float) -> HPoint:
        return cls(float(x), float(y), 1.0)

    @property
    def is_infinite(self) -> bool:
        return self.w == 0.0

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def xy(self) -> np.ndarray:
        if self.is_infinite:
            raise ValueError("point at infinity has no Euclidean coordinates")
        return np.array([self.x, self.y])


class HLine(NamedTuple):
    """Homogeneous image line ``l1*x + l2*y + l3 = 0`` with unit normal."""

    l1: float
    l2: float
    l3: float

    @classmethod
    def from_vector(cls, v) -> HLine:
        v = np.asarray(v, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)) or not np.any(v):
            raise ValueError(f"invalid homogeneous line {v!r}")
        n = math.hypot(v[0], v[1])
        if n == 0.0:
            return cls(0.0, 0.0, 1.0)  # the line at infinity
        return cls(v[0] / n, v[1] / n, v[2] / n)

    @classmethod
    def through(cls, p, q) -> HLine:
        """Line joining two points (homogeneous 3-vectors or ``(x, y)`` pairs)."""
        return cls.from_vector(np.cross(_homog(p), _homog(q)))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.l1, self.l2])

    @property
    def direction(self) -> np.ndarray:
        return np.array([-self.l2, self.l1])

    @property
    def angle(self) -> float:
        """Orientation of the line in ``[0, pi)``."""
        return math.atan2(self.l1, -self.l2) % math.pi

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.normal + self.l3

    def intersect(self, other: HLine) -> HPoint:
        return HPoint.from_vector(np.cross(self.as_array(), other.as_array()))

    def x_at(self, y: float) -> float:
        return -(self.l2 * y + self.l3) / self.l1

    def same_as(self, other: HLine, tol: float = 1e-9) -> bool:
        u, v = self.as_array(), other.as_array()
        return bool(min(np.abs(u - v).max(), np.abs(u + v).max()) <= tol)


def _homog(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 2:
        return np.array([p[0], p[1], 1.0])
    if p.size == 3:
        return p
    raise ValueError(f"expected a 2- or 3-vector, got shape {p.shape}")


def _angle_diff(t, ref):
    """Signed difference ``t - ref`` wrapped to ``(-pi, pi]``."""
    return (np.asarray(t) - ref + math.pi) % _TWO_PI - math.pi


@dataclass(frozen=True)
class Ellipse:
    """Ellipse with centre ``(cx, cy)``, semi-axes ``a >= b > 0`` and the
    orientation ``theta`` of the major axis in ``[0, pi)``.

    ``theta`` is measured from +x towards +y. Parametric points are
    ``centre + R(theta) @ (a cos t, b sin t)``.
    """

    cx: float
    cy: float
    a: float
    b: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.a, self.b, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite ellipse parameters {vals}")
        if not self.a >= self.b > 0:
            raise ValueError(f"need a >= b > 0, got a={self.a}, b={self.b}")
        if not 0.0 <= self.theta < math.pi:
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")

    @classmethod
    def canonical(cls, cx, cy, a, b, theta=0.0) -> Ellipse:
        """Build from loose parameters: swaps axes if needed and wraps theta."""
        a, b = abs(float(a)), abs(float(b))
        theta = float(theta)
        if b > a:
            a, b = b, a
            theta += math.pi / 2
        if a == b:
            theta = 0.0
        theta %= math.pi
        if theta >= math.pi:
            theta = 0.0
        return cls(float(cx), float(cy), a, b, theta)

    @classmethod
    def from_conic(cls, conic) -> Ellipse:
        """Parametric form of the real ellipse described by a symmetric 3x3 conic."""
        C = np.asarray(conic, dtype=float)
        C = 0.5 * (C + C.T)
        A, B, Cc = C[0, 0], C[0, 1], C[1, 1]
        D, E, F = C[0, 2], C[1, 2], C[2, 2]
        det2 = A * Cc - B * B
        scale = max(abs(A), abs(Cc), abs(B))
        if not np.all(np.isfinite(C)) or scale == 0 or det2 <= 1e-14 * scale * scale:
            raise DegenerateFit("conic is not an ellipse")
        cx = (B * E - Cc * D) / det2
        cy = (B * D - A * E) / det2
        f0 = F + D * cx + E * cy
        if A < 0:
            A, B, Cc, f0 = -A, -B, -Cc, -f0
        if not f0 < 0:
            raise DegenerateFit("conic has no real points")
        half_sum = 0.5 * (A + Cc)
        disc = math.hypot(0.5 * (A - Cc), B)
        lam_max = half_sum + disc
        lam_min = det2 / lam_max
        a = math.sqrt(-f0 / lam_min)
        b = math.sqrt(-f0 / lam_max)
        if disc <= 1e-14 * half_sum:
            theta = 0.0
        else:
            theta = 0.5 * math.atan2(-2.0 * B, Cc - A)
        return cls.canonical(cx, cy, a, b, theta)

    @classmethod
    def from_dual_conic(cls, dual) -> Ellipse:
        """Ellipse from its line conic ``C*``.

        Scaled so that ``C*[2, 2] = -1`` the line conic reads
        ``[[M - c c^T, -c], [-c^T, -1]]`` with ``M = R diag(a^2, b^2) R^T``,
        so centre and shape come out without inverting anything. This stays
        accurate for needle-thin ellipses where the point conic does not.
        """
        Q = np.asarray(dual, dtype=float)
        Q = 0.5 * (Q + Q.T)
        w = Q[2, 2]
        if not np.all(np.isfinite(Q)) or w == 0:
            raise DegenerateFit("line conic is not a bounded ellipse")
        Q = Q / -w
        c = -Q[:2, 2]
        M = Q[:2, :2] + np.outer(c, c)
        half_sum = 0.5 * (M[0, 0] + M[1, 1])
        disc = math.hypot(0.5 * (M[0, 0] - M[1, 1]), M[0, 1])
        lam_max = half_sum + disc
        lam_min = (M[0, 0] * M[1, 1] - M[0, 1] ** 2) / lam_max
        if not lam_min > 0:
            raise DegenerateFit("line conic is not a bounded ellipse")
        theta = 0.0 if disc <= 1e-14 * half_sum else 0.5 * math.atan2(2.0 * M[0, 1], M[0, 0] - M[1, 1])
        return cls.canonical(c[0], c[1], math.sqrt(lam_max), math.sqrt(lam_min), theta)

    # -- basic geometry -------------------------------------------------
    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @cached_property
    def affine(self) -> np.ndarray:
        """3x3 map taking the unit circle onto this ellipse."""
        T = np.eye(3)
        T[:2, :2] = self.rotation @ np.diag([self.a, self.b])
        T[:2, 2] = self.center
        return T

    @cached_property
    def affine_inv(self) -> np.ndarray:
        Ti = np.eye(3)
        Ti[:2, :2] = np.diag([1.0 / self.a, 1.0 / self.b]) @ self.rotation.T
        Ti[:2, 2] = -Ti[:2, :2] @ self.center
        return Ti

    def conic(self) -> np.ndarray:
        """Point conic, scaled so the centre evaluates to -1 (inside < 0)."""
        Ti = self.affine_inv
        return Ti.T @ np.diag([1.0, 1.0, -1.0]) @ Ti

    def dual_conic(self) -> np.ndarray:
        """Line conic: ``l @ C* @ l == 0`` for every tangent line ``l``."""
        T = self.affine
        return T @ np.diag([1.0, 1.0, -1.0]) @ T.T

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        local = np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)
        return local @ self.rotation.T + self.center

    def param_of(self, points) -> np.ndarray:
        """Eccentric anomaly of (near-)boundary points."""
        u = self.to_unit(points)
        return np.arctan2(u[..., 1], u[..., 0])

    def to_unit(self, points) -> np.ndarray:
        """Coordinates in the frame where this ellipse is the unit circle."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.center) @ self.affine_inv[:2, :2].T

    def level(self, points) -> np.ndarray:
        """Scale-free implicit value: < 0 inside, 0 on, > 0 outside."""
        u = self.to_unit(points)
        return np.sum(u * u, axis=-1) - 1.0

    def tangent_line_at(self, t: float) -> HLine:
        u = np.array([math.cos(t), math.sin(t), -1.0])
        return HLine.from_vector(self.affine_inv.T @ u)

    def outward_normal_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        local = np.stack([np.cos(t) / self.a, np.sin(t) / self.b], axis=-1)
        local /= np.linalg.norm(local, axis=-1, keepdims=True)
        return local @ self.rotation.T

    def support(self, normal) -> np.ndarray:
        """Support function: max of ``n . x`` over the ellipse."""
        n = np.asarray(normal, dtype=float)
        m = n @ self.rotation
        return n @ self.center + np.sqrt((self.a * m[..., 0]) ** 2 + (self.b * m[..., 1]) ** 2)

    def bbox(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hx = math.hypot(self.a * c, self.b * s)
        hy = math.hypot(self.a * s, self.b * c)
        return self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy

    def contains(self, points) -> np.ndarray:
        return self.level(points) < 0

    def tangency_residual(self, line) -> float:
        """``l @ C* @ l`` for a unit-normal line; zero when tangent."""
        l = HLine.from_vector(line).as_array()
        return float(l @ self.dual_conic() @ l)

    def tangency_point(self, line) -> np.ndarray:
        """Point of the ellipse closest to being touched by ``line`` (its pole,
        pulled onto the boundary)."""
        l = np.asarray(line, dtype=float)
        L = self.affine.T @ l  # the line in the unit-circle frame
        u = -L[:2] / np.hypot(L[0], L[1]) * np.sign(L[2])
        return self.center + self.affine[:2, :2] @ u

    # -- distances ------------------------------------------------------
    def foot_points(self, points):
        """Closest boundary points.

        Returns ``(feet, t, signed_distance)`` with the distance positive
        outside the ellipse.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        local = (pts - self.center) @ self.rotation
        y0, y1 = np.abs(local[:, 0]), np.abs(local[:, 1])
        x0, x1 = _closest_on_ellipse_quadrant(self.a, self.b, y0, y1)
        x0 = np.copysign(x0, local[:, 0])
        x1 = np.copysign(x1, local[:, 1])
        feet = np.column_stack([x0, x1]) @ self.rotation.T + self.center
        t = np.arctan2(x1 / self.b, x0 / self.a)
        dist = np.hypot(local[:, 0] - x0, local[:, 1] - x1)
        inside = (local[:, 0] / self.a) ** 2 + (local[:, 1] / self.b) ** 2 < 1.0
        return feet, t, np.where(inside, -dist, dist)

    def distance(self, points) -> np.ndarray:
        """Unsigned orthogonal distance of each point to the boundary."""
        return np.abs(self.foot_points(points)[2])

    # -- lines ----------------------------------------------------------
    def intersect_lines(self, lines, tol: float = 1e-9):
        """Intersect an array of homogeneous lines ``(N, 3)`` with the ellipse.

        Returns ``(p1, p2, t1, t2, hit)``. The two points are ordered along
        the line direction ``(-l2, l1)``; lines within ``tol`` (in unit-circle
        units) of tangency count as touching.
        """
        lines = np.atleast_2d(np.asarray(lines, dtype=float))
        L = lines @ self.affine
        al, be, ga = L[:, 0], L[:, 1], L[:, 2]
        nn = al * al + be * be
        with np.errstate(divide="ignore", invalid="ignore"):
            h2 = 1.0 - ga * ga / nn
            hit = (h2 >= -tol) & (nn > 0)
            h = np.sqrt(np.clip(h2, 0.0, None))
            foot = -(ga / nn)[:, None] * np.column_stack([al, be])
            d = np.column_stack([-be, al]) / np.sqrt(nn)[:, None]
        # orient d along the image-space direction (-l2, l1)
        img_dir = np.column_stack([-lines[:, 1], lines[:, 0]])
        flip = np.sum((d @ self.affine[:2, :2].T) * img_dir, axis=1) < 0
        d[flip] *= -1
        u1 = foot - h[:, None] * d
        u2 = foot + h[:, None] * d
        M = self.affine[:2, :2]
        p1 = u1 @ M.T + self.center
        p2 = u2 @ M.T + self.center
        t1 = np.arctan2(u1[:, 1], u1[:, 0])
        t2 = np.arctan2(u2[:, 1], u2[:, 0])
        return p1, p2, t1, t2, hit


def _closest_on_ellipse_quadrant(a, b, y0, y1, iterations: int = 120):
    """Closest point on ``(x/a)^2 + (y/b)^2 = 1`` for query points in the
    first quadrant (robust bisection form of Eberly's method), ``a >= b``."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    x0 = np.empty_like(y0)
    x1 = np.empty_like(y1)

    gen = (y1 > 0) & (y0 > 0)
    if np.any(gen):
        z0, z1 = y0[gen], y1[gen]
        lo = -b * b + b * z1
        hi = -b * b + np.sqrt((a * z0) ** 2 + (b * z1) ** 2)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break  # every bracket is down to adjacent floats
            f = (a * z0 / (mid + a * a)) ** 2 + (b * z1 / (mid + b * b)) ** 2 - 1.0
            pos = f > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        t = 0.5 * (lo + hi)
        x0[gen] = a * a * z0 / (t + a * a)
        x1[gen] = b * b * z1 / (t + b * b)

    on_minor = (y1 > 0) & (y0 <= 0)
    x0[on_minor] = 0.0
    x1[on_minor] = b

    on_major = y1 <= 0
    if np.any(on_major):
        z0 = y0[on_major]
        denom = a * a - b * b
        inner = z0 * a < denom
        r0 = np.where(inner, a * a * z0 / np.where(denom > 0, denom, 1.0), a)
        r1 = np.where(inner, b * np.sqrt(np.clip(1.0 - (r0 / a) ** 2, 0.0, None)), 0.0)
        x0[on_major] = r0
        x1[on_major] = r1
    return x0, x1


@dataclass(frozen=True)
class EllipseArc:
    """Arc of an ellipse from parameter ``t_start`` sweeping ``t_span``
    radians (signed), addressed by normalised arc length ``u`` in [0, 1]."""

    ellipse: Ellipse
    t_start: float
    t_span: float

    @classmethod
    def between(cls, ellipse: Ellipse, start, end, through) -> EllipseArc:
        """Arc from point ``start`` to point ``end`` that passes ``through``."""
        ts, te, tm = (float(ellipse.param_of(np.asarray(p, dtype=float))) for p in (start, end, through))
        ccw = (te - ts) % _TWO_PI
        if (tm - ts) % _TWO_PI <= ccw:
            return cls(ellipse, ts, ccw)
        return cls(ellipse, ts, ccw - _TWO_PI)

    def param(self, tau) -> np.ndarray:
        return self.t_start + np.asarray(tau, dtype=float) * self.t_span

    def tau_of_param(self, t) -> np.ndarray:
        """Fraction of the angular sweep reached at ``t`` (outside [0, 1] when
        ``t`` is not on the arc)."""
        off = np.asarray(t, dtype=float) - self.t_start
        if self.t_span >= 0:
            off = off % _TWO_PI
        else:
            off = -((-off) % _TWO_PI)
        tau = off / self.t_span
        # parameters just before the start wrap to ~2pi/|span|; map them near 0
        back = (tau - 1.0) * abs(self.t_span) > 0.5 * (_TWO_PI - abs(self.t_span))
        return np.where(back, tau - _TWO_PI / abs(self.t_span), tau)

    @cached_property
    def _table(self):
        tau = np.linspace(0.0, 1.0, 4097)
        t = self.param(tau)
        e = self.ellipse
        speed = np.hypot(e.a * np.sin(t), e.b * np.cos(t)) * abs(self.t_span)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(tau))])
        return tau, s

    @property
    def length(self) -> float:
        return float(self._table[1][-1])

    def u_of_param(self, t) -> np.ndarray:
        tau_grid, s = self._table
        tau = self.tau_of_param(t)
        return np.interp(tau, tau_grid, s) / s[-1]

    def param_of_u(self, u) -> np.ndarray:
        tau_grid, s = self._table
        return self.param(np.interp(np.asarray(u, dtype=float) * s[-1], s, tau_grid))

    def point_at_u(self, u) -> np.ndarray:
        return self.ellipse.point_at(self.param_of_u(u))

    @property
    def start_point(self) -> np.ndarray:
        return self.ellipse.point_at(self.t_start)

    @property
    def end_point(self) -> np.ndarray:
        return self.ellipse.point_at(self.t_start + self.t_span)

    def sample(self, spacing: float = 1.0):
        """Points spaced ``spacing`` px apart by arc length, both ends included.

        Returns ``(points, u)``.
        """
        n = int(math.ceil(self.length / spacing)) + 1
        u = np.linspace(0.0, 1.0, max(n, 2))
        return self.point_at_u(u), u


# ---------------------------------------------------------------------------
# fitting


def sampson_distance(conic, points) -> np.ndarray:
    """First-order geometric distance of points to a point conic."""
    C = np.asarray(conic, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    X = np.column_stack([pts, np.ones(len(pts))])
    CX = X @ C
    q = np.sum(CX * X, axis=1)
    grad = 2.0 * CX[:, :2]
    return q / np.linalg.norm(grad, axis=1)


def fit_ellipse(points, *, refine_iterations: int = 20, full_output: bool = False):
    """Direct least-squares ellipse fit with geometric Gauss-Newton polish.

    The algebraic fit is the ellipse-specific direct method (constraint
    ``4AC - B^2 = 1``, numerically stable partitioned form) on points that
    are first centred and scaled. Up to ``refine_iterations`` Gauss-Newton
    passes then minimise orthogonal distance, stopping once a pass no longer
    lowers the cost. Thin ellipses (minor axis below a pixel) need several
    passes because the algebraic start is poor there.

    With ``full_output=True`` returns ``(ellipse, rms_sampson_distance)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 6:
        raise TooFewPoints(f"need at least 6 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")

    mean = pts.mean(axis=0)
    spread = np.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1)))
    if spread == 0:
        raise DegenerateFit("all points coincide")
    s = math.sqrt(2.0) / spread
    x = (pts[:, 0] - mean[0]) * s
    y = (pts[:, 1] - mean[1]) * s

    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1 = D1.T @ D1
    S2 = D1.T @ D2
    S3 = D2.T @ D2
    if np.linalg.cond(S3) > 1e12:
        raise DegenerateFit("points are collinear")
    T = -np.linalg.solve(S3, S2.T)
    M = S1 + S2 @ T
    M = np.vstack([M[2] / 2.0, -M[1], M[0] / 2.0])
    _, vecs = np.linalg.eig(M)
    vecs = np.real(vecs)
    cond = 4.0 * vecs[0] * vecs[2] - vecs[1] ** 2
    candidates = np.flatnonzero(cond > 0)
    if candidates.size == 0:
        raise DegenerateFit("no ellipse-type solution")
    best, best_res = None, np.inf
    for i in candidates:
        a1 = vecs[:, i]
        coef = np.concatenate([a1, T @ a1])
        res = np.linalg.norm(np.column_stack([D1, D2]) @ coef) / np.linalg.norm(coef)
        if res < best_res:
            best, best_res = coef, res
    A, B, C, Dd, E, F = best
    Cn = np.array([[A, B / 2, Dd / 2], [B / 2, C, E / 2], [Dd / 2, E / 2, F]])
    N = np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])
    ellipse = Ellipse.from_conic(N.T @ Cn @ N)

    for _ in range(refine_iterations):
        refined = _gauss_newton_pass(ellipse, pts)
        if refined is ellipse:
            break
        ellipse = refined

    if full_output:
        rms = float(np.sqrt(np.mean(sampson_distance(ellipse.conic(), pts) ** 2)))
        return ellipse, rms
    return ellipse


def _gauss_newton_pass(e: Ellipse, pts: np.ndarray) -> Ellipse:
    _, t, r = e.foot_points(pts)
    cost = float(r @ r)
    if cost == 0.0:
        return e
    ct, st = np.cos(t), np.sin(t)
    R = e.rotation
    n = e.outward_normal_at(t)
    dR = np.array([[-R[1, 0], -R[0, 0]], [R[0, 0], -R[1, 0]]])  # d R / d theta
    local = np.column_stack([e.a * ct, e.b * st])
    dth = local @ dR.T
    J = -np.column_stack(
        [
            n[:, 0],
            n[:, 1],
            ct * (n @ R[:, 0]),
            st * (n @ R[:, 1]),
            np.sum(n * dth, axis=1),
        ]
    )
    delta = np.linalg.lstsq(J, -r, rcond=None)[0]
    params = np.array([e.cx, e.cy, e.a, e.b, e.theta])
    if np.abs(delta[:4]).max() <= 1e-13 * (e.a + np.abs(params[:2]).max()) and abs(delta[4]) <= 1e-13:
        return e  # converged; a line search would only burn foot-point solves
    step = 1.0
    for _ in range(8):
        p = params + step * delta
        if p[2] > 0 and p[3] > 0:
            try:
                cand = Ellipse.canonical(*p)
            except ValueError:
                cand = None
            if cand is not None:
                rc = cand.foot_points(pts)[2]
                if float(rc @ rc) < cost:
                    return cand
        step *= 0.5
    return e


# ---------------------------------------------------------------------------
# tangents


def tangents_from_point(e: Ellipse, q, tol: float = 1e-9) -> tuple[HLine, HLine]:
    """The two tangent lines of ``e`` through an outside point ``q``.

    ``q`` may be an :class:`HPoint` (possibly at infinity, giving the two
    tangents parallel to that direction) or an ``(x, y)`` pair.
    """
    Q = e.affine_inv @ _homog(q)
    X, Y, W = Q
    r2 = X * X + Y * Y
    if W != 0:
        level = r2 / (W * W) - 1.0
        if level < -tol:
            raise PointInsideEllipse(f"{tuple(q)} lies inside the ellipse")
        if level <= tol:
            raise PointOnEllipse(f"{tuple(q)} lies on the ellipse")
    root = math.sqrt(r2 - W * W) / r2
    base = np.array([X, Y]) * (W / r2)
    perp = np.array([-Y, X]) * root
    lines = []
    for u in (base + perp, base - perp):
        lines.append(HLine.from_vector(e.affine_inv.T @ np.array([u[0], u[1], -1.0])))
    return lines[0], lines[1]


def separation(e1: Ellipse, e2: Ellipse):
    """Best separating direction between two ellipses.

    Returns ``(alpha, gap)``: unit normal ``(cos alpha, sin alpha)`` points
    from ``e1`` towards ``e2`` and ``gap > 0`` is the width of the empty slab
    between them (``gap <= 0`` when they touch or overlap).
    """

    def slab(alpha):
        n = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
        return e1.support(n) + e2.support(-n)  # = -(gap)

    grid = np.linspace(0.0, _TWO_PI, 1441)[:-1]
    vals = slab(grid)
    k = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(
        lambda a: float(slab(np.array(a))),
        bounds=(grid[k] - step, grid[k] + step),
        method="bounded",
        options={"xatol": 1e-13},
    )
    alpha = float(res.x) if res.fun < vals[k] else float(grid[k])
    return alpha % _TWO_PI, -float(min(res.fun, vals[k]))


def _support_gap(e1: Ellipse, e2: Ellipse, alpha):
    """How far ``e2`` reaches beyond ``e1``'s support line with normal angle
    ``alpha``; zero exactly on a common external tangent."""
    n = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
    return e2.support(n) - e1.support(n)


def common_external_tangents(
    e1: Ellipse,
    e2: Ellipse,
    *,
    max_iter: int = 200,
    tol: float = 1e-14,
) -> tuple[HLine, HLine, HPoint]:
    """The two common external tangents of disjoint ellipses and their
    intersection (the vanishing point, ``w == 0`` when they are parallel).

    Each tangent is found by bisection on the orientation of a support line
    of ``e1``: as the line turns, the amount by which ``e2`` pokes past it
    changes sign exactly once on each half-turn away from the separating
    direction. The sign pattern is checked on a coarse sweep first and
    :class:`NoConvergence` is raised if it is not the expected one.

    The first returned line has its outward normal counter-clockwise (x
    right, y up sense) from the direction separating ``e1`` from ``e2``.
    """
    alpha0, gap = separation(e1, e2)
    scale = max(e1.a, e2.a, 1.0)
    if gap <= 1e-9 * scale:
        raise EllipsesOverlap("ellipses touch or overlap")

    sweep = alpha0 + np.linspace(0.0, _TWO_PI, 2049)
    signs = np.sign(_support_gap(e1, e2, sweep))
    changes = np.count_nonzero(signs[1:] * signs[:-1] < 0)
    if signs[0] <= 0 or changes != 2:
        raise NoConvergence(f"support gap has {changes} sign changes, expected 2")

    lines = []
    for lo, hi in ((alpha0, alpha0 + math.pi), (alpha0 + math.pi, alpha0 + _TWO_PI)):
        g_lo = _support_gap(e1, e2, lo)
        converged = False
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            g = _support_gap(e1, e2, mid)
            if abs(g) < tol * scale or mid in (lo, hi):
                converged = True
                break
            if (g > 0) == (g_lo > 0):
                lo, g_lo = mid, g
            else:
                hi = mid
        if not converged:
            raise NoConvergence(f"bisection exceeded {max_iter} iterations")
        n = np.array([math.cos(mid), math.sin(mid)])
        h = 0.5 * (e1.support(n) + e2.support(n))
        line = HLine.from_vector([n[0], n[1], -h])
        worst = max(abs(e1.tangency_residual(line)), abs(e2.tangency_residual(line)))
        if worst > 1e-6:
            raise NoConvergence(f"tangency residual {worst:.3g} after bisection")
        lines.append(line)
    vp = lines[0].intersect(lines[1])
    return lines[0], lines[1], vp


# ---------------------------------------------------------------------------
# cross-ratio


def _as_result(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def cross_ratio(a, b, c, d):
    """``(AC * BD) / (AD * BC)`` for signed positions on a line.

    ``d`` may be ``inf`` (point at infinity), giving the limit ``AC / BC``.
    Works elementwise on arrays. ``b == c`` yields ``inf``.
    """
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    finite_d = np.isfinite(d)
    if np.any(a == c) or np.any(finite_d & ((a == d) | (c == d))):
        raise CoincidentAnchors("anchor positions a, c, d must be pairwise distinct")
    c0 = c - a
    b0 = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = np.where(finite_d, 1.0 / np.where(finite_d, d - a, 1.0), 0.0)
        k = c0 * (1.0 - b0 * inv_d) / (c0 - b0)
    return _as_result(k)


def solve_fourth_point(a, c, d, kappa):
    """Position ``b`` with ``cross_ratio(a, b, c, d) == kappa``.

    Elementwise on arrays; ``kappa == inf`` gives ``b == c``.
    """
    a, c, d, kappa = (np.asarray(v, dtype=float) for v in (a, c, d, kappa))
    finite_d = np.isfinite(d)
    if np.any(a == c) or np.any(finite_d & ((a == d) | (c == d))):
        raise CoincidentAnchors("anchor positions a, c, d must be pairwise distinct")
    if np.any(np.isnan(kappa)):
        raise NoSolutionInSegment("cross-ratio is NaN")
    c0 = c - a
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(finite_d, c0 / np.where(finite_d, d - a, 1.0), 0.0)
        den = rho - kappa
        b = a + c0 * (1.0 - kappa) / den
    b = np.where(np.isinf(kappa), c, b)
    if np.any(~np.isfinite(b)):
        raise NoSolutionInSegment("fourth point is at infinity")
    return _as_result(b)
