import numpy as np
import pytest

from echowall import imgproc, phantom, wallgeom
from echowall.errors import DegenerateBoundaryError, GeometryError, MissingSegmentError
from echowall.wallgeom import SegmentRatios


def straight_path(n):
    """Axis-aligned U-ish path of n points with unit steps (a flat line)."""
    return np.array([(5, c) for c in range(n)])


def vee_path(half):
    """Symmetric V with the apex (topmost point) exactly in the middle."""
    left = [(r, half - r) for r in range(half, 0, -1)]
    apex = [(0, half)]
    right = [(r, half + r) for r in range(1, half + 1)]
    return np.array(left + apex + right)


# ---------------------------------------------------------------- find_apex

def test_apex_of_symmetric_vee_is_midpoint():
    p = vee_path(20)
    assert wallgeom.find_apex(p) == 20


def test_apex_unique_topmost():
    p = np.array([(5, c) for c in range(30)])
    p[17, 0] = 3
    assert wallgeom.find_apex(p) == 17


def test_apex_plateau_tie_goes_to_arc_midpoint():
    # 5-point plateau at the top, centered on the arc midpoint
    pts = [(4, 0), (3, 1), (2, 2), (1, 3)]
    plateau = [(0, 4 + i) for i in range(5)]
    down = [(1, 9), (2, 10), (3, 11), (4, 12)]
    p = np.array(pts + plateau + down)
    # brute-force the rule: topmost row, then nearest to half total arc length
    cum = wallgeom.arc_lengths(p)
    cand = [i for i in range(len(p)) if p[i, 0] == 0]
    expect = min(cand, key=lambda i: abs(cum[i] - cum[-1] / 2))
    got = wallgeom.find_apex(p)
    assert got == expect == 6  # plateau center


# ---------------------------------------------------------------- split_lr

def test_split_symmetric():
    p = vee_path(15)
    left, right = wallgeom.split_lr(p, wallgeom.find_apex(p))
    assert left == pytest.approx(right)


def test_split_near_start_counts_steps():
    p = straight_path(11)
    left, right = wallgeom.split_lr(p, 1)
    assert left == pytest.approx(1.0)
    assert right == pytest.approx(9.0)


def test_split_additivity_random_path():
    rng = np.random.default_rng(13)
    # random 8-connected walk
    steps = rng.integers(-1, 2, size=(60, 2))
    steps[(steps == 0).all(axis=1)] = (0, 1)
    p = np.cumsum(np.vstack([[50, 50], steps]), axis=0)
    cum = wallgeom.arc_lengths(p)
    for apex in (5, 23, 41):
        left, right = wallgeom.split_lr(p, apex)
        assert left + right == pytest.approx(cum[-1])


# ---------------------------------------------------------- divide_segments

def thirds(apical=0.0):
    return SegmentRatios((1 / 3, 1 / 3, 1 / 3), (1 / 3, 1 / 3, 1 / 3), apical)


def test_divide_equal_thirds_no_cap():
    p = straight_path(300)
    arcs = wallgeom.divide_segments(p, 150, thirds(0.0))
    counts = [len(a) for a in arcs]
    assert counts[3] <= 1  # apical cap is (near) empty
    for i in (0, 1, 2, 4, 5, 6):
        assert abs(counts[i] - 50) <= 1
    assert np.array_equal(np.concatenate([a for a in arcs if len(a)]), p)


def test_divide_ten_percent_cap():
    p = straight_path(300)
    arcs = wallgeom.divide_segments(p, 150, thirds(0.10))
    counts = [len(a) for a in arcs]
    # ~30 points straddling the apex, ~15 carved from each of segments 3 and 5
    assert abs(counts[3] - 30) <= 2
    assert abs(counts[2] - 35) <= 2
    assert abs(counts[4] - 35) <= 2
    assert np.array_equal(np.concatenate(arcs), p)


def test_divide_partition_is_exact():
    rng = np.random.default_rng(2)
    for _ in range(5):
        steps = rng.integers(-1, 2, size=(80, 2))
        steps[(steps == 0).all(axis=1)] = (1, 0)
        p = np.cumsum(np.vstack([[0, 0], steps]), axis=0)
        arcs = wallgeom.divide_segments(p, 40, thirds(0.08))
        assert np.array_equal(np.concatenate([a for a in arcs if len(a)]), p)


def test_divide_too_short_errors():
    with pytest.raises(DegenerateBoundaryError):
        wallgeom.divide_segments(straight_path(5), 2, thirds())


# --------------------------------------------------------- segment mapping

def brute_segment_map(mask, arcs):
    """Per-pixel python-loop nearest-boundary-point assignment."""
    out = np.zeros(mask.shape, dtype=np.uint8)
    labeled = [(k + 1, [tuple(p) for p in arc]) for k, arc in enumerate(arcs) if len(arc)]
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            if not mask[r, c]:
                continue
            best = None
            for seg, pts in labeled:
                for (br, bc) in pts:
                    d = (br - r) ** 2 + (bc - c) ** 2
                    if best is None or d < best[0] or (d == best[0] and seg < best[1]):
                        best = (d, seg)
            out[r, c] = best[1]
    return out


def phantom_geometry(size=48, thickness=5.0, **kw):
    cfg = phantom.PhantomConfig(image_size=size, n_frames=5, wall_thickness=thickness,
                                base_amplitude=2.0, speckle_sigma=0.0, rng_seed=3, **kw)
    echo = phantom.generate_echo(cfg)
    return echo.truth_masks[0]


def test_segment_map_matches_brute_force():
    mask = phantom_geometry()
    geom = wallgeom.analyze_mask(mask, thirds(0.10))
    assert np.array_equal(geom.segment_map, brute_segment_map(mask, geom.arcs))


def test_segment_map_zero_distance_pixels():
    mask = phantom_geometry()
    geom = wallgeom.analyze_mask(mask)
    for k, arc in enumerate(geom.arcs):
        for p in arc[:: max(1, len(arc) // 5)]:
            assert geom.segment_map[p[0], p[1]] == k + 1


def test_segment_map_covers_wall_exactly():
    mask = phantom_geometry()
    geom = wallgeom.analyze_mask(mask)
    assert np.array_equal(geom.segment_map > 0, mask)


def test_symmetric_phantom_balanced_counts():
    # needs arcs long enough that the half-pixel apex quantization stays small
    mask = phantom_geometry(size=112, thickness=8.0)
    geom = wallgeom.analyze_mask(mask)
    counts = {s: int((geom.segment_map == s).sum()) for s in wallgeom.ALL_SEGMENTS}
    for a, b in ((1, 7), (2, 6), (3, 5)):
        assert abs(counts[a] - counts[b]) <= 0.02 * max(counts[a], counts[b])


def test_mirror_maps_segments_k_to_8_minus_k():
    mask = phantom_geometry()
    geom = wallgeom.analyze_mask(mask, thirds(0.10))
    mirrored = mask[:, ::-1]
    geom_m = wallgeom.analyze_mask(mirrored, thirds(0.10))
    w = mask.shape[1]
    for k in range(7):
        pts = {(int(r), int(w - 1 - c)) for r, c in geom.arcs[k]}
        pts_m = {(int(r), int(c)) for r, c in geom_m.arcs[6 - k]}
        # arc-level match up to a couple of cut-point pixels
        assert len(pts ^ pts_m) <= 4


# --------------------------------------------------------- segment centers

def full_map():
    """Segment map with one pixel per analyzed segment, editable by tests."""
    sm = np.zeros((21, 21), dtype=np.uint8)
    for i, seg in enumerate(wallgeom.ANALYZED_SEGMENTS):
        sm[20, 2 * i] = seg
    return sm


def test_center_of_3x3_block():
    sm = full_map()
    sm[20, 2] = 0
    sm[9:12, 9:12] = 2  # segment 2 as a 3x3 block centered at (10, 10)
    c = wallgeom.segment_centers(sm)
    assert tuple(c[1]) == (10.0, 10.0)


def test_center_of_two_pixel_segment():
    sm = full_map()
    sm[20, 0] = 0
    sm[0, 0] = 1
    sm[0, 2] = 1
    c = wallgeom.segment_centers(sm)
    assert tuple(c[0]) == (0.0, 1.0)


def test_centers_match_brute_mean():
    mask = phantom_geometry()
    geom = wallgeom.analyze_mask(mask)
    centers = wallgeom.segment_centers(geom.segment_map)
    for i, seg in enumerate(wallgeom.ANALYZED_SEGMENTS):
        rr, cc = np.nonzero(geom.segment_map == seg)
        assert centers[i] == pytest.approx((rr.mean(), cc.mean()))


def test_centers_missing_segment_named():
    sm = np.zeros((6, 6), dtype=np.uint8)
    for seg in (1, 2, 3, 5, 6):
        sm[seg - 1, 0] = seg
    with pytest.raises(MissingSegmentError, match="7"):
        wallgeom.segment_centers(sm)
