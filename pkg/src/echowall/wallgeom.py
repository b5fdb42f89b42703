"""Division of the wall into the standardized 7 segments of the A4C view.

Segments 1, 2, 3 run along the left half of the endocardial boundary from
base to apex, segment 4 is the apical cap straddling the apex, and segments
5, 6, 7 run from apex back to the right base. Every wall pixel is then
labeled by its nearest boundary point, and segment 4 is excluded from all
downstream motion analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateBoundaryError, GeometryError, MissingSegmentError
from . import imgproc

ANALYZED_SEGMENTS = (1, 2, 3, 5, 6, 7)
ALL_SEGMENTS = (1, 2, 3, 4, 5, 6, 7)


@dataclass(frozen=True)
class SegmentRatios:
    """Boundary length fractions for the segment division.

    ``left_fractions`` covers segments 1, 2, 3 (base to apex) as fractions of
    the left half; ``right_fractions`` covers segments 7, 6, 5 (base to apex)
    as fractions of the right half. ``apical_fraction`` is the fraction of
    the total boundary length given to segment 4, carved symmetrically from
    the apical ends of segments 3 and 5. Defaults are equal thirds with a
    10% apical cap.
    """

    left_fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    right_fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    apical_fraction: float = 0.10

    def validate(self) -> None:
        for name, fr in (("left_fractions", self.left_fractions),
                         ("right_fractions", self.right_fractions)):
            if len(fr) != 3:
                raise ConfigError(f"{name} must hold 3 fractions")
            if any(not 0.0 < f < 1.0 for f in fr):
                raise ConfigError(f"{name} entries must lie strictly in (0, 1)")
            if abs(sum(fr) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must sum to 1, got {sum(fr)}")
        if not 0.0 <= self.apical_fraction < 1.0:
            raise ConfigError(
                f"apical_fraction must lie in [0, 1), got {self.apical_fraction}"
            )


def arc_lengths(boundary: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a boundary path.

    Axis-aligned steps count 1, diagonal steps sqrt(2); entry i is the length
    from the path start to point i (entry 0 is 0).
    """
    d = np.abs(np.diff(np.asarray(boundary, dtype=np.float64), axis=0))
    steps = np.where((d[:, 0] > 0) & (d[:, 1] > 0), np.sqrt(2.0), 1.0)
    return np.concatenate([[0.0], np.cumsum(steps)])


def find_apex(boundary: np.ndarray) -> int:
    """Index of the topmost boundary point; ties go to the point whose arc
    position is closest to the path midpoint (earlier index on a further tie)."""
    boundary = np.asarray(boundary)
    top = boundary[:, 0].min()
    cand = np.flatnonzero(boundary[:, 0] == top)
    if len(cand) == 1:
        return int(cand[0])
    cum = arc_lengths(boundary)
    mid = cum[-1] / 2.0
    off = np.abs(cum[cand] - mid)
    return int(cand[np.argmin(off)])


def split_lr(boundary: np.ndarray, apex_index: int) -> tuple[float, float]:
    """Arc lengths of the left (start to apex) and right (apex to end) halves."""
    n = len(boundary)
    if not 0 < apex_index < n - 1:
        raise GeometryError(f"apex index {apex_index} must be interior to the path of {n} points")
    cum = arc_lengths(boundary)
    left = float(cum[apex_index])
    return left, float(cum[-1] - left)


def divide_segments(boundary: np.ndarray, apex_index: int, ratios: SegmentRatios) -> list:
    """Split the boundary into the 7 contiguous segment arcs.

    Returns a list of 7 point arrays ordered 1..7 along the path; segment 4
    may be empty when apical_fraction is 0. Cut points land on the boundary
    point nearest each target arc length (earlier index on ties), and the
    arcs concatenate back to the input path exactly.
    """
    ratios.validate()
    boundary = np.asarray(boundary)
    n = len(boundary)
    if n < 7:
        raise DegenerateBoundaryError(f"boundary of {n} points cannot hold 7 segments")
    cum = arc_lengths(boundary)
    total = cum[-1]
    left, right = split_lr(boundary, apex_index)
    half_cap = ratios.apical_fraction * total / 2.0
    lf = ratios.left_fractions
    g5, g6 = ratios.right_fractions[2], ratios.right_fractions[1]
    targets = [
        left * lf[0],
        left * (lf[0] + lf[1]),
        left - half_cap,
        left + half_cap,
        left + right * g5,
        left + right * (g5 + g6),
    ]
    cuts = [int(np.argmin(np.abs(cum - t))) for t in targets]
    cuts = np.maximum.accumulate(cuts)
    edges = [0, *cuts, n]
    return [boundary[a:b] for a, b in zip(edges, edges[1:])]


def build_segment_map(mask: np.ndarray, arcs: list) -> np.ndarray:
    """Label every wall pixel with the segment of its nearest boundary point.

    Distances are Euclidean on pixel centers; exact ties go to the lower
    segment number. Returns a uint8 map with 0 on background.
    """
    mask = np.asarray(mask, dtype=bool)
    if not any(len(a) for a in arcs):
        raise GeometryError("all segment arcs are empty")
    pr, pc = np.nonzero(mask)
    out = np.zeros(mask.shape, dtype=np.uint8)
    if len(pr) == 0:
        return out
    sentinel = np.iinfo(np.int64).max
    best = np.full((7, len(pr)), sentinel, dtype=np.int64)
    for k, arc in enumerate(arcs):
        if len(arc) == 0:
            continue
        br = np.asarray(arc)[:, 0][:, None]
        bc = np.asarray(arc)[:, 1][:, None]
        d2 = (br - pr[None, :]) ** 2 + (bc - pc[None, :]) ** 2
        best[k] = d2.min(axis=0)
    labels = np.argmin(best, axis=0) + 1  # first minimum = lowest segment
    out[pr, pc] = labels.astype(np.uint8)
    return out


def segment_centers(segment_map: np.ndarray) -> np.ndarray:
    """Center of mass (mean pixel coordinate) of each analyzed segment.

    Returns a (6, 2) float array of (row, col) in the order 1, 2, 3, 5, 6, 7.
    """
    segment_map = np.asarray(segment_map)
    centers = np.empty((6, 2), dtype=np.float64)
    for i, seg in enumerate(ANALYZED_SEGMENTS):
        rr, cc = np.nonzero(segment_map == seg)
        if len(rr) == 0:
            raise MissingSegmentError(f"segment {seg} has no pixels")
        centers[i] = rr.mean(), cc.mean()
    return centers


@dataclass
class WallGeometry:
    """Per-frame geometric decomposition of one wall mask."""
    boundary: np.ndarray
    apex_index: int
    arcs: list
    segment_map: np.ndarray


def analyze_mask(mask: np.ndarray, ratios: SegmentRatios | None = None) -> WallGeometry:
    """Boundary trace, apex split, segment arcs, and segment map for a mask."""
    if ratios is None:
        ratios = SegmentRatios()
    boundary = imgproc.extract_endocardial_boundary(mask)
    apex = find_apex(boundary)
    arcs = divide_segments(boundary, apex, ratios)
    seg_map = build_segment_map(mask, arcs)
    return WallGeometry(boundary, apex, arcs, seg_map)
