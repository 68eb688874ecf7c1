"""Detect cylindrical labels in photos and re-render them at new poses."""

__version__ = "0.1.0"

from .camera import (
    IDENTITY_POSE,
    CameraIntrinsics,
    CylinderModel,
    Pose,
    TargetRegion,
    project_point,
    project_rim_circle,
    render_reference,
    silhouette_lines,
    target_region,
)
from .conic import (
    Ellipse,
    EllipseArc,
    HLine,
    HPoint,
    common_external_tangents,
    cross_ratio,
    fit_ellipse,
    solve_fourth_point,
    tangents_from_point,
)
from .region import LabelRegion
from .retrieval import Embedding, TripletBatch, batch_all_triplet_loss, cosine_distance, rank_top_k
from .rims import RimDetectParams, detect_label_region, extract_rim_chains, vertical_edge_map
from .synthesis import extract_line_samples, front_view, reproject, synthesize_view
