"""Figure output for the CLI report paths.

Uses matplotlib's object-oriented API (``Figure`` objects saved directly),
so importing this module never touches the global pyplot backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .imaging import as_rgb, save_png, to_uint8
from .region import LabelRegion


def draw_region(ax, region: LabelRegion, *, arcs_only: bool = False) -> None:
    """Overlay rims, silhouette lines and anchors on an axes."""
    t = np.linspace(0, 2 * np.pi, 400)
    for e, color in ((region.upper, "tab:red"), (region.lower, "tab:green")):
        if not arcs_only:
            p = e.point_at(t)
            ax.plot(p[:, 0], p[:, 1], color=color, lw=0.6, ls=":")
    for arc, color in ((region.upper_arc, "tab:red"), (region.lower_arc, "tab:green")):
        p = arc.point_at_u(np.linspace(0, 1, 200))
        ax.plot(p[:, 0], p[:, 1], color=color, lw=1.2)
    for line in (region.left, region.right):
        ends = np.array([region.upper_arc.start_point, region.lower_arc.start_point]) if line is region.left \
            else np.array([region.upper_arc.end_point, region.lower_arc.end_point])
        ax.plot(ends[:, 0], ends[:, 1], color="tab:cyan", lw=1.0)
    a1, an = region.first_anchor, region.last_anchor
    ax.plot([a1[0], an[0]], [a1[1], an[1]], "o", color="yellow", ms=3)


def _image_axes(fig, image, title=None, pos=111):
    ax = fig.add_subplot(*pos) if isinstance(pos, tuple) else fig.add_subplot(pos)
    img = np.asarray(image)
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None, interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)
    ax.set_xlim(-0.5, img.shape[1] - 0.5)
    ax.set_ylim(img.shape[0] - 0.5, -0.5)
    return ax


def _block_image(grid, shape):
    bs = grid.block_size
    rgb = np.zeros((*grid.sign.shape, 3), dtype=np.uint8)
    rgb[grid.sign > 0] = (220, 40, 40)
    rgb[grid.sign < 0] = (40, 200, 40)
    big = np.repeat(np.repeat(rgb, bs, axis=0), bs, axis=1)
    return big[: shape[0], : shape[1]]


def save_detection_stages(image, debug: dict, out_dir) -> list[Path]:
    """Write the numbered stage images and an overview figure.

    ``debug`` is the dict filled by ``detect_label_region(..., debug=...)``;
    stages missing from it (detection stopped early) are skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    panels = []
    rgb = as_rgb(np.asarray(image))
    if "gray" in debug:
        written.append(save_png(out / "01_gray.png", debug["gray"]))
        panels.append(("gray", to_uint8(debug["gray"]), None))
    if "edges" in debug:
        g = debug["edges"].gradient
        scale = max(1e-9, np.abs(g).max())
        written.append(save_png(out / "02_gradient.png", 127.5 + 127.5 * g / scale))
        written.append(save_png(out / "03_edges.png", debug["edges"].mask * 255))
        panels.append(("vertical gradient", to_uint8(127.5 + 127.5 * g / scale), None))
        panels.append(("edge pixels", to_uint8(debug["edges"].mask * 255), None))
    if "grid" in debug:
        blocks = _block_image(debug["grid"], rgb.shape)
        written.append(save_png(out / "04_blocks.png", blocks))
        panels.append(("edge blocks", blocks, None))
    if "upper_chain" in debug:
        chains = (debug["upper_chain"], debug["lower_chain"])
        written.append(_save_overlay(out / "05_chains.png", rgb, chains=chains))
        panels.append(("rim chains", rgb, {"chains": chains}))
    if "region" in debug:
        written.append(_save_overlay(out / "06_region.png", rgb, region=debug["region"]))
        panels.append(("fitted region", rgb, {"region": debug["region"]}))
    if panels:
        fig = Figure(figsize=(3.2 * len(panels), 3.0))
        for i, (title, img, overlay) in enumerate(panels):
            ax = _image_axes(fig, img, title, (1, len(panels), i + 1))
            _overlay(ax, overlay or {})
        fig.tight_layout()
        path = out / "overview.png"
        fig.savefig(path, dpi=110)
        written.append(path)
    return written


def _overlay(ax, overlay):
    for ch, color in zip(overlay.get("chains", ()), ("tab:red", "tab:green")):
        ax.plot(ch.points[:, 0], ch.points[:, 1], ".", color=color, ms=1)
    if "region" in overlay:
        draw_region(ax, overlay["region"])


def _save_overlay(path, image, **overlay):
    h, w = image.shape[:2]
    fig = Figure(figsize=(w / 100, h / 100))
    ax = fig.add_axes((0, 0, 1, 1))
    ax.imshow(image, interpolation="nearest")
    ax.set_axis_off()
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    _overlay(ax, overlay)
    fig.savefig(path, dpi=100)
    return Path(path)


def save_gallery(images, titles, path, *, columns: int | None = None, suptitle: str | None = None) -> Path:
    """Grid of images with a caption under each."""
    n = len(images)
    if n == 0:
        raise ValueError("nothing to plot")
    cols = columns or min(n, 5)
    rows = -(-n // cols)
    fig = Figure(figsize=(2.8 * cols, 2.3 * rows + (0.4 if suptitle else 0)))
    for i, (img, title) in enumerate(zip(images, titles)):
        _image_axes(fig, img, title, (rows, cols, i + 1))
    if suptitle:
        fig.suptitle(suptitle, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    return path
