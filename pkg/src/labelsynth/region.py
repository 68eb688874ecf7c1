"""Two-dimensional description of a label wrapped on a cylinder.

A label region is bounded by the visible arcs of two rim ellipses and by
the two silhouette lines, which are the common external tangents of the
rims and meet at the vanishing point of the bottle axis. Every longitudinal
line of the label passes through that vanishing point, so a pixel's
longitudinal line is simply the line joining it to the vanishing point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .conic import Ellipse, EllipseArc, HLine, HPoint, common_external_tangents
from .errors import NoIntersection


def ray_ellipse(ellipse: Ellipse, origins, directions, tol: float = 1e-6):
    """Intersect rays ``origin + s * direction`` with an ellipse.

    Returns ``(s_near, s_far, hit)`` with ``s_near <= s_far``. ``tol`` is the
    slack (px^2, on the squared half-chord) under which a grazing ray still
    counts as touching.
    """
    P = np.atleast_2d(np.asarray(origins, dtype=float))
    E = np.atleast_2d(np.asarray(directions, dtype=float))
    Minv = ellipse.affine_inv[:2, :2]
    U = (P - ellipse.center) @ Minv.T
    V = E @ Minv.T
    vv = np.sum(V * V, axis=1)
    uv = np.sum(U * V, axis=1)
    uu = np.sum(U * U, axis=1)
    disc = uv * uv - vv * (uu - 1.0)
    # half-chord squared in the units of s
    half2 = disc / (vv * vv)
    hit = half2 >= -tol
    root = np.sqrt(np.clip(half2, 0.0, None))
    mid = -uv / vv
    return mid - root, mid + root, hit


@dataclass(frozen=True)
class LabelRegion:
    """Rim ellipses, silhouette lines and vanishing point of one label.

    ``upper_arc``/``lower_arc`` are the visible rim arcs, each running from
    its tangency point with ``left`` to the one with ``right``. ``wider``
    names the rim whose visible arc spans more pixels.
    """

    upper: Ellipse
    lower: Ellipse
    left: HLine
    right: HLine
    vp: HPoint
    upper_arc: EllipseArc
    lower_arc: EllipseArc
    wider: str
    upper_points: np.ndarray | None = field(default=None, compare=False, repr=False)
    lower_points: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.wider not in ("upper", "lower"):
            raise ValueError(f"wider must be 'upper' or 'lower', not {self.wider!r}")

    @classmethod
    def from_ellipses(
        cls,
        upper: Ellipse,
        lower: Ellipse,
        upper_ref,
        lower_ref,
        *,
        tangents: tuple[HLine, HLine, HPoint] | None = None,
        upper_points=None,
        lower_points=None,
    ) -> LabelRegion:
        """Assemble a region from two rim ellipses.

        ``upper_ref``/``lower_ref`` are points known to lie on the visible
        part of each rim (e.g. the middle of a detected rim chain); they pick
        which of the two arcs between the tangency points is the front one.
        Without ``tangents`` the common external tangents are computed.
        """
        if tangents is None:
            tangents = common_external_tangents(upper, lower)
        l1, l2, vp = tangents
        y_mid = 0.5 * (upper.cy + lower.cy)
        left, right = sorted((l1, l2), key=lambda l: _x_on_line(l, y_mid))
        arcs = []
        for e, ref in ((upper, upper_ref), (lower, lower_ref)):
            arcs.append(
                EllipseArc.between(e, e.tangency_point(left), e.tangency_point(right), ref)
            )
        widths = [np.linalg.norm(a.end_point - a.start_point) for a in arcs]
        wider = "upper" if widths[0] > widths[1] else "lower"
        return cls(
            upper, lower, left, right, vp, arcs[0], arcs[1], wider,
            None if upper_points is None else np.asarray(upper_points, dtype=float),
            None if lower_points is None else np.asarray(lower_points, dtype=float),
        )

    # -- rim roles ------------------------------------------------------
    @property
    def wider_arc(self) -> EllipseArc:
        return self.upper_arc if self.wider == "upper" else self.lower_arc

    @property
    def narrower_arc(self) -> EllipseArc:
        return self.lower_arc if self.wider == "upper" else self.upper_arc

    @property
    def first_anchor(self) -> np.ndarray:
        """Leftmost visible point of the wider rim (A_1)."""
        return self.wider_arc.start_point

    @property
    def last_anchor(self) -> np.ndarray:
        """Rightmost visible point of the wider rim (A_N)."""
        return self.wider_arc.end_point

    # -- longitudinal pencil -------------------------------------------
    @cached_property
    def _axis_hint(self) -> np.ndarray:
        """Direction used for lines when the vanishing point is at infinity,
        oriented from the wider rim towards the narrower one."""
        v = np.array([self.vp.x, self.vp.y])
        toward = self.narrower_arc.ellipse.center - self.wider_arc.ellipse.center
        return v if v @ toward >= 0 else -v

    def longitudinal_directions(self, points) -> np.ndarray:
        """Unit direction of the longitudinal line through each point, pointing
        away from a finite vanishing point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.vp.is_infinite:
            return np.broadcast_to(self._axis_hint, pts.shape).copy()
        d = pts - np.array([self.vp.x, self.vp.y])
        n = np.linalg.norm(d, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return d / n

    def arc(self, rim: str) -> EllipseArc:
        if rim not in ("upper", "lower"):
            raise ValueError(f"rim must be 'upper' or 'lower', not {rim!r}")
        return self.upper_arc if rim == "upper" else self.lower_arc

    def _far_root(self, arc: EllipseArc) -> bool:
        """Whether the visible part of ``arc`` is met at the *far* root of a
        longitudinal ray (rays point away from the vanishing point)."""
        mid = arc.point_at_u(0.5)
        e = self.longitudinal_directions(mid)
        s1, s2, _ = ray_ellipse(arc.ellipse, mid, e, tol=1.0)
        return bool(abs(s2[0]) < abs(s1[0]))

    def pencil_coordinates(self, points, anchor_rim: str | None = None, tol: float = 1e-6):
        """Locate points within the label along their longitudinal lines.

        For every point P, returns signed positions (along the longitudinal
        direction, with P at 0) of its anchor-rim point ``s_a``, opposite-rim
        point ``s_c`` and the vanishing point ``s_d`` (``-inf`` when at
        infinity), the transverse coordinate ``u`` in [0, 1] (normalised arc
        length along the anchor rim) and a boolean ``inside``.

        The anchor rim defaults to the wider one; pass ``anchor_rim`` to
        measure from a specific rim instead.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        e = self.longitudinal_directions(pts)
        rim = anchor_rim or self.wider
        wa = self.arc(rim)
        na = self.arc("lower" if rim == "upper" else "upper")
        far_w, far_n = self._far_root(wa), self._far_root(na)
        w1, w2, hit_w = ray_ellipse(wa.ellipse, pts, e, tol)
        n1, n2, hit_n = ray_ellipse(na.ellipse, pts, e, tol)
        s_a = w2 if far_w else w1
        s_c = n2 if far_n else n1
        if self.vp.is_infinite:
            s_d = np.full(len(pts), -np.inf)
        else:
            s_d = -np.linalg.norm(pts - np.array([self.vp.x, self.vp.y]), axis=1)
        a_pts = pts + s_a[:, None] * e
        u = np.clip(wa.u_of_param(wa.ellipse.param_of(a_pts)), 0.0, 1.0)
        lo = np.minimum(s_a, s_c)
        hi = np.maximum(s_a, s_c)
        inside = hit_w & hit_n & (lo <= 0.0) & (hi >= 0.0) & np.isfinite(e[:, 0])
        return {"s_a": s_a, "s_c": s_c, "s_d": s_d, "u": u, "e": e, "inside": inside}

    def narrower_anchor(self, anchors, tol: float = 1e-4) -> np.ndarray:
        """Point where the longitudinal line from each wider-rim anchor meets
        the visible narrower rim (C_k)."""
        pts = np.atleast_2d(np.asarray(anchors, dtype=float))
        e = self.longitudinal_directions(pts)
        far_n = self._far_root(self.narrower_arc)
        n1, n2, hit = ray_ellipse(self.narrower_arc.ellipse, pts, e, tol)
        if not np.all(hit):
            raise NoIntersection(
                f"{np.count_nonzero(~hit)} longitudinal line(s) miss the narrower rim"
            )
        s = n2 if far_n else n1
        return pts + s[:, None] * e

    def mask(self, shape) -> np.ndarray:
        """Rasterised label region (pixel centres inside)."""
        h, w = shape[:2]
        ys, xs = np.mgrid[0:h, 0:w]
        pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
        return self.pencil_coordinates(pts)["inside"].reshape(h, w)

    def bbox(self) -> tuple[float, float, float, float]:
        boxes = np.array([self.upper.bbox(), self.lower.bbox()])
        return (boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max())


def _x_on_line(line: HLine, y: float) -> float:
    if abs(line.l1) < 1e-12:
        return -np.sign(line.l2) * np.inf
    return line.x_at(y)
