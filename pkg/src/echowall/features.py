"""Per-segment displacement and area curves over one cycle, reduced to the
motion/area feature vector used for MI detection.

Frame 0 is the reference (end-diastole). For each analyzed segment three
features are produced: the normalized maximum displacement of its boundary
arc, the normalized maximum displacement of its center of mass, and the
minimum fraction of its reference area still covered over the cycle. Six
segments give 18 features; five-segment mode drops the apex-adjacent
segment 5, leaving 15.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EchoWallError, MissingSegmentError
from . import wallgeom
from .wallgeom import ANALYZED_SEGMENTS

SIX_SEGMENT = "six_segment"
FIVE_SEGMENT = "five_segment"
DEFAULT_ARC_SAMPLES = 10


@dataclass
class DisplacementCurve:
    segment_id: int
    values: np.ndarray  # per-frame displacement in pixels, values[0] == 0


@dataclass
class AreaCurve:
    segment_id: int
    values: np.ndarray  # per-frame pixel count of the overlap with frame 0
    reference_area: int


@dataclass
class FeatureVector:
    mode: str
    names: list
    values: np.ndarray


def l1_displacement(p, q) -> float:
    """City-block distance between two (row, col) points."""
    return float(abs(p[0] - q[0]) + abs(p[1] - q[1]))


def sample_arc(arc: np.ndarray, n: int) -> np.ndarray:
    """Pick n points of an arc at uniform arc-length midpoint positions.

    Sampling positions are (k + 1/2)/n of the arc length, mapped to the
    nearest arc point (earlier index on ties), so identically shaped arcs
    sample identical relative points.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    arc = np.asarray(arc)
    cum = wallgeom.arc_lengths(arc)
    targets = (np.arange(n) + 0.5) * (cum[-1] / n)
    idx = np.argmin(np.abs(cum[None, :] - targets[:, None]), axis=1)
    return arc[idx]


def _analyzed_arcs(arcs, frame: int):
    out = {}
    for k, seg in enumerate((1, 2, 3, 4, 5, 6, 7)):
        if seg == 4:
            continue
        arc = arcs[k]
        if len(arc) == 0:
            raise MissingSegmentError(f"frame {frame}: segment {seg} has an empty boundary arc")
        out[seg] = np.asarray(arc)
    return out


def boundary_displacement_curve(arcs_per_frame, n_samples: int = DEFAULT_ARC_SAMPLES) -> list:
    """Mean pairwise L1 displacement of sampled boundary points per segment.

    ``arcs_per_frame`` holds one 7-arc list per frame (segment 4 is skipped).
    For each segment and frame, n_samples points are taken at matching
    arc-length positions on the frame arc and the reference arc and paired by
    sample index.
    """
    ref = _analyzed_arcs(arcs_per_frame[0], 0)
    ref_samples = {seg: sample_arc(arc, n_samples) for seg, arc in ref.items()}
    n_frames = len(arcs_per_frame)
    curves = []
    for seg in ANALYZED_SEGMENTS:
        values = np.zeros(n_frames)
        for t in range(1, n_frames):
            arc = _analyzed_arcs(arcs_per_frame[t], t)[seg]
            pts = sample_arc(arc, n_samples)
            values[t] = np.abs(pts - ref_samples[seg]).sum(axis=1).mean()
        curves.append(DisplacementCurve(seg, values))
    return curves


def center_displacement_curve(maps_per_frame) -> list:
    """L1 displacement of each segment's center of mass against frame 0."""
    centers = []
    for t, seg_map in enumerate(maps_per_frame):
        try:
            centers.append(wallgeom.segment_centers(seg_map))
        except MissingSegmentError as e:
            raise MissingSegmentError(f"frame {t}: {e}") from e
    centers = np.stack(centers)  # (T, 6, 2)
    disp = np.abs(centers - centers[0]).sum(axis=2)  # (T, 6)
    return [DisplacementCurve(seg, disp[:, i]) for i, seg in enumerate(ANALYZED_SEGMENTS)]


def area_curve(maps_per_frame) -> list:
    """Overlap of each segment's footprint with its reference footprint."""
    ref_map = np.asarray(maps_per_frame[0])
    curves = []
    for seg in ANALYZED_SEGMENTS:
        ref = ref_map == seg
        ref_area = int(ref.sum())
        if ref_area == 0:
            raise MissingSegmentError(f"frame 0: segment {seg} has no pixels")
        values = np.empty(len(maps_per_frame))
        for t, seg_map in enumerate(maps_per_frame):
            values[t] = np.logical_and(np.asarray(seg_map) == seg, ref).sum()
        curves.append(AreaCurve(seg, values, ref_area))
    return curves


def motion_feature(curves) -> np.ndarray:
    """Per-segment maximum displacement, normalized so the largest is 1.

    An all-static echo (every maximum 0) maps to all zeros rather than 0/0.
    """
    maxima = np.array([float(np.max(c.values)) for c in curves])
    top = maxima.max()
    if top == 0.0:
        return np.zeros_like(maxima)
    return maxima / top


def area_feature(curve: AreaCurve) -> float:
    """Minimum overlap with the reference footprint as a fraction of it."""
    if curve.reference_area <= 0:
        raise MissingSegmentError(f"segment {curve.segment_id} has zero reference area")
    return float(np.min(curve.values) / curve.reference_area)


def feature_names(mode: str) -> list:
    segs = ANALYZED_SEGMENTS if mode == SIX_SEGMENT else tuple(s for s in ANALYZED_SEGMENTS if s != 5)
    names = []
    for seg in segs:
        names += [f"mf_boundary_s{seg}", f"mf_center_s{seg}", f"af_s{seg}"]
    return names


def extract_features(
    echo_masks,
    ratios: wallgeom.SegmentRatios | None = None,
    n_samples: int = DEFAULT_ARC_SAMPLES,
    mode: str = SIX_SEGMENT,
) -> FeatureVector:
    """Full per-echo feature extraction from one cycle of wall masks.

    Runs boundary tracing and segment division on every frame, computes the
    three curve families, and reduces them to the ordered feature vector.
    Geometry failures abort the echo with the frame attached to the error.
    """
    if mode not in (SIX_SEGMENT, FIVE_SEGMENT):
        raise ValueError(f"unknown mode {mode!r}")
    geoms = []
    for t, mask in enumerate(echo_masks):
        try:
            geoms.append(wallgeom.analyze_mask(mask, ratios))
        except EchoWallError as e:
            raise type(e)(f"frame {t}: {e}") from e
    b_curves = boundary_displacement_curve([g.arcs for g in geoms], n_samples)
    maps = [g.segment_map for g in geoms]
    c_curves = center_displacement_curve(maps)
    a_curves = area_curve(maps)
    mf_b = motion_feature(b_curves)
    mf_c = motion_feature(c_curves)
    af = np.array([area_feature(c) for c in a_curves])

    values = []
    for i, seg in enumerate(ANALYZED_SEGMENTS):
        if mode == FIVE_SEGMENT and seg == 5:
            continue
        values += [mf_b[i], mf_c[i], af[i]]
    return FeatureVector(mode, feature_names(mode), np.array(values))


# ------------------------------------------------------------------ csv io

def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_curves_csv(path, curves) -> None:
    """One curve family as CSV: frame, seg1, seg2, seg3, seg5, seg6, seg7."""
    curves = list(curves)
    header = "frame," + ",".join(f"seg{c.segment_id}" for c in curves)
    lines = [header]
    for t in range(len(curves[0].values)):
        lines.append(f"{t}," + ",".join(_fmt(c.values[t]) for c in curves))
    Path(path).write_text("\n".join(lines) + "\n")


def write_features_csv(path, rows, mode: str = SIX_SEGMENT) -> None:
    """Feature table as CSV. Rows are (echo_id, is_mi, FeatureVector)."""
    lines = ["echo_id,mi," + ",".join(feature_names(mode))]
    for echo_id, is_mi, fv in rows:
        lines.append(f"{echo_id},{1 if is_mi else 0}," + ",".join(_fmt(v) for v in fv.values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_features_csv(path):
    """Read a feature table back: (echo_ids, X, y, names)."""
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    names = header[2:]
    ids, X, y = [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        ids.append(parts[0])
        y.append(int(parts[1]))
        X.append([float(v) for v in parts[2:]])
    return ids, np.array(X), np.array(y, dtype=int), names
