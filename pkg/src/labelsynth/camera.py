"""Virtual pinhole camera looking at a posed cylinder with a label band.

Frames: the camera sits at the origin looking down +z, with +x to the right
and +y down so that image rows grow with y. In the bottle's own frame the
axis points along -y (up), and a surface point at azimuth ``phi`` and height
``h`` is ``(r sin phi, -h, -r cos phi)``; azimuth 0 faces the camera at the
identity pose. A pose rotates the bottle about camera x, then camera z, with
the label mid-height point as pivot, then places that point at ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import Ellipse, EllipseArc, HLine, HPoint
from .errors import BehindCamera, CameraInsideCylinder, DegenerateFit, DegenerateView
from .imaging import bilinear_sample, to_uint8
from .region import LabelRegion


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_mm: float = 6.8
    pixel_pitch_mm: float = 0.0075
    width: int = 640
    height: int = 480
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.focal_mm <= 0 or self.pixel_pitch_mm <= 0:
            raise ValueError("focal length and pixel pitch must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def fx(self) -> float:
        return self.focal_mm / self.pixel_pitch_mm

    @property
    def K(self) -> np.ndarray:
        f = self.fx
        return np.array([[f, 0.0, self.cx], [0.0, f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class CylinderModel:
    """Bottle radius and the label band, as heights above/below the label
    mid-height point."""

    radius_mm: float = 38.0
    label_top_mm: float = 25.0
    label_bottom_mm: float = -25.0

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError("radius_mm must be positive")
        if self.label_top_mm <= self.label_bottom_mm:
            raise ValueError("label_top_mm must exceed label_bottom_mm")


@dataclass(frozen=True)
class Pose:
    """Rotation (degrees) about camera x then camera z, and the position of
    the label mid-height point in mm."""

    rot_x_deg: float = 0.0
    rot_z_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 150.0

    @classmethod
    def parse(cls, text: str) -> Pose:
        """Parse ``"rx,rz,tx,ty,tz"``."""
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 5:
            raise ValueError(f"pose needs 5 comma-separated numbers, got {text!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"pose values must be numbers: {text!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pose values must be finite: {text!r}")
        return cls(*vals)

    def format(self) -> str:
        return ",".join(repr(float(v)) for v in self.as_tuple())

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.rot_x_deg, self.rot_z_deg, self.tx, self.ty, self.tz)

    @property
    def rotation(self) -> np.ndarray:
        ax = math.radians(self.rot_x_deg)
        az = math.radians(self.rot_z_deg)
        c, s = math.cos(ax), math.sin(ax)
        # positive rot_x tips the top of the bottle away from the camera
        rx = np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
        c, s = math.cos(az), math.sin(az)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return rz @ rx

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz], dtype=float)

    @property
    def axis(self) -> np.ndarray:
        """Unit vector pointing up the bottle, in camera coordinates."""
        return self.rotation @ np.array([0.0, -1.0, 0.0])

    def surface_point(self, phi, h, radius: float) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        h = np.broadcast_to(np.asarray(h, dtype=float), phi.shape)
        local = np.stack([radius * np.sin(phi), -h, -radius * np.cos(phi)], axis=-1)
        return local @ self.rotation.T + self.t


IDENTITY_POSE = Pose()


def project_point(p, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of 3D points (..., 3) in mm to pixels (..., 2)."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCamera("point at or behind the camera plane")
    f = intrinsics.fx
    return np.stack([f * p[..., 0] / z + intrinsics.cx, f * p[..., 1] / z + intrinsics.cy], axis=-1)


def rim_circle_points(pose: Pose, height: float, cylinder: CylinderModel, n: int = 500):
    """``n`` points of the rim circle at ``height``, in camera coordinates."""
    phi = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return pose.surface_point(phi, height, cylinder.radius_mm)


def project_rim_circle(
    pose: Pose, height: float, cylinder: CylinderModel, intrinsics: CameraIntrinsics
) -> Ellipse:
    """Exact image ellipse of the rim circle at ``height`` on the axis.

    The circle is the unit circle of its plane under ``X = c + r(s e1 + t e3)``;
    composing with the camera gives a plane-to-image homography H. The image
    is read from the line conic ``H diag(1, 1, -1) H^T``, which avoids
    inverting H (nearly singular when the rim plane almost meets the camera).
    """
    R = pose.rotation
    a = pose.axis
    r = cylinder.radius_mm
    c = pose.t + height * a
    scale = np.linalg.norm(c)
    if abs(a @ c) <= 1e-9 * max(scale, 1.0):
        raise DegenerateView("camera centre lies in the plane of the rim circle")
    if c[2] - r * math.sqrt(max(0.0, 1.0 - a[2] ** 2)) <= 0:
        raise BehindCamera("rim circle crosses the camera plane")
    H = intrinsics.K @ np.column_stack([r * R[:, 0], r * R[:, 2], c])
    try:
        return Ellipse.from_dual_conic(H @ np.diag([1.0, 1.0, -1.0]) @ H.T)
    except DegenerateFit as exc:
        raise DegenerateView(str(exc)) from None


def _silhouette_geometry(pose: Pose, cylinder: CylinderModel):
    """Closest axis point to the camera and the two tangent-plane normals."""
    a = pose.axis
    t = pose.t
    p0 = t - (t @ a) * a
    rho = float(np.linalg.norm(p0))
    r = cylinder.radius_mm
    if rho <= r * (1 + 1e-12):
        raise CameraInsideCylinder(f"camera is {rho:.3f} mm from the axis, radius is {r} mm")
    e1 = p0 / rho
    e2 = np.cross(a, e1)
    ct = r / rho
    st = math.sqrt(1.0 - ct * ct)
    normals = (ct * e1 + st * e2, ct * e1 - st * e2)
    return p0, e1, normals


def silhouette_lines(
    pose: Pose, cylinder: CylinderModel, intrinsics: CameraIntrinsics
) -> tuple[HLine, HLine, HPoint]:
    """Image of the two planes through the camera tangent to the cylinder.

    Returns ``(left, right, vp)``; ``vp`` is the image of the axis direction.
    """
    lines, _ = _silhouettes_with_normals(pose, cylinder, intrinsics)
    vp = HPoint.from_vector(intrinsics.K @ pose.axis)
    return lines[0], lines[1], vp


def _silhouettes_with_normals(pose, cylinder, intrinsics):
    _, _, normals = _silhouette_geometry(pose, cylinder)
    Kinv_T = np.linalg.inv(intrinsics.K).T
    lines = [HLine.from_vector(Kinv_T @ n) for n in normals]
    if pose.t[2] > 0:
        y_ref = float(project_point(pose.t, intrinsics)[1])
    else:
        y_ref = intrinsics.cy
    order = sorted(range(2), key=lambda i: _x_on(lines[i], y_ref))
    return [lines[i] for i in order], [normals[i] for i in order]


def _x_on(line: HLine, y: float) -> float:
    if abs(line.l1) < 1e-12:
        return -math.copysign(math.inf, line.l2)
    return line.x_at(y)


@dataclass(frozen=True)
class TargetRegion(LabelRegion):
    """Label region computed analytically for a known pose."""

    pose: Pose | None = field(default=None, compare=False)
    cylinder: CylinderModel | None = field(default=None, compare=False)
    intrinsics: CameraIntrinsics | None = field(default=None, compare=False)


def target_region(
    pose: Pose,
    cylinder: CylinderModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
) -> TargetRegion:
    """Analytic label region for ``pose``.

    Visible-arc endpoints are the exact tangency points of the silhouette
    lines, obtained by projecting the 3D silhouette generators.
    """
    cylinder = cylinder or CylinderModel()
    intrinsics = intrinsics or CameraIntrinsics()
    r = cylinder.radius_mm
    heights = (cylinder.label_top_mm, cylinder.label_bottom_mm)
    p0, e1, _ = _silhouette_geometry(pose, cylinder)
    ellipses = [project_rim_circle(pose, h, cylinder, intrinsics) for h in heights]
    (left, right), normals = _silhouettes_with_normals(pose, cylinder, intrinsics)
    vp = HPoint.from_vector(intrinsics.K @ pose.axis)
    a = pose.axis
    arcs = []
    for e, h in zip(ellipses, heights):
        centre = pose.t + h * a
        ends = []
        for n in normals:
            g = p0 - r * n
            ends.append(project_point(g + (h - (g - pose.t) @ a) * a, intrinsics))
        facing = project_point(centre - r * e1, intrinsics)
        arcs.append(EllipseArc.between(e, ends[0], ends[1], facing))
    widths = [np.linalg.norm(arc.end_point - arc.start_point) for arc in arcs]
    wider = "upper" if widths[0] > widths[1] else "lower"
    return TargetRegion(
        ellipses[0], ellipses[1], left, right, vp, arcs[0], arcs[1], wider,
        pose=pose, cylinder=cylinder, intrinsics=intrinsics,
    )


def render_reference(
    pose: Pose,
    texture,
    cylinder: CylinderModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
    *,
    wrap_deg: float = 240.0,
    supersample: int = 3,
    return_coords: bool = False,
):
    """Ray-cast the label texture onto the posed cylinder.

    The texture spans ``wrap_deg`` degrees of azimuth centred on azimuth 0
    and the full label band vertically (row 0 at the top). Everything that
    is not label is black. Returns ``(image uint8, mask)``, plus per-pixel
    ``(phi, h)`` of the pixel-centre ray hit (NaN where no label) when
    ``return_coords`` is set. Meant as an independent reference for tests.
    """
    cylinder = cylinder or CylinderModel()
    intrinsics = intrinsics or CameraIntrinsics()
    tex = np.asarray(texture, dtype=float)
    if tex.ndim == 2:
        tex = tex[..., None]
    if tex.size == 0 or tex.shape[0] < 1 or tex.shape[1] < 1:
        raise ValueError("texture is empty")
    if pose.tz <= 0:
        raise BehindCamera("label centre is behind the camera")
    _silhouette_geometry(pose, cylinder)
    H, W = intrinsics.height, intrinsics.width
    ss = max(1, int(supersample))
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    Rt = pose.rotation.T
    origin = Rt @ (-pose.t)
    Kinv = np.linalg.inv(intrinsics.K)
    C = tex.shape[2]
    out = np.zeros((H, W, C))
    cover = np.zeros((H, W))
    phi_c = np.full((H, W), np.nan) if return_coords else None
    h_c = np.full((H, W), np.nan) if return_coords else None
    chunk = max(1, 40000 // W)
    for y0 in range(0, H, chunk):
        y1 = min(H, y0 + chunk)
        ys, xs = np.mgrid[y0:y1, 0:W].astype(float)
        acc = np.zeros((y1 - y0, W, C))
        cov = np.zeros((y1 - y0, W))
        for dy in offs:
            for dx in offs:
                val, hit, _, _ = _trace(xs + dx, ys + dy, Kinv, Rt, origin, cylinder, tex, wrap_deg)
                acc += val
                cov += hit
        out[y0:y1] = acc / (ss * ss)
        cover[y0:y1] = cov / (ss * ss)
        if return_coords:
            _, hit, phi, h = _trace(xs, ys, Kinv, Rt, origin, cylinder, tex, wrap_deg)
            phi_c[y0:y1] = np.where(hit, phi, np.nan)
            h_c[y0:y1] = np.where(hit, h, np.nan)
    mask = cover >= 0.5
    img = to_uint8(out)
    if img.shape[2] == 1:
        img = img[..., 0]
    if return_coords:
        return img, mask, phi_c, h_c
    return img, mask


def _trace(xs, ys, Kinv, Rt, origin, cylinder, tex, wrap_deg):
    d = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ Kinv.T @ Rt.T
    ox, oz = origin[0], origin[2]
    dx, dz = d[..., 0], d[..., 2]
    r = cylinder.radius_mm
    A = dx * dx + dz * dz
    B = 2 * (ox * dx + oz * dz)
    Cq = ox * ox + oz * oz - r * r
    disc = B * B - 4 * A * Cq
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (-B - np.sqrt(disc)) / (2 * A)
    ok = (disc >= 0) & (A > 0) & (s > 0)
    s = np.where(ok, s, 0.0)
    px = ox + s * dx
    py = origin[1] + s * d[..., 1]
    pz = oz + s * dz
    phi = np.arctan2(px, -pz)
    h = -py
    half = math.radians(wrap_deg) / 2
    hit = ok & (h >= cylinder.label_bottom_mm) & (h <= cylinder.label_top_mm) & (np.abs(phi) <= half)
    th, tw = tex.shape[:2]
    col = (phi / (2 * half) + 0.5) * tw - 0.5
    row = (cylinder.label_top_mm - h) / (cylinder.label_top_mm - cylinder.label_bottom_mm) * th - 0.5
    val = bilinear_sample(tex, col, row)
    val = np.where(hit[..., None], val, 0.0)
    return val, hit.astype(float), phi, h
