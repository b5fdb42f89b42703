import numpy as np
import pytest

from echowall import features, phantom, wallgeom
from echowall.errors import MissingSegmentError
from echowall.features import AreaCurve, DisplacementCurve


def ring_mask(size=40, dy=0, dx=0):
    """Enclosed annulus translated by (dy, dx); cavity never touches a border."""
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy - 18 - dy) ** 2 + (xx - 18 - dx) ** 2
    return (d2 <= 121) & (d2 >= 49)


def hand_maps(shift_cols=0):
    """Segment maps with a 10x10 block for segment 1 and far-away dots for the rest."""
    m = np.zeros((40, 60), dtype=np.uint8)
    m[5:15, 5 + shift_cols : 15 + shift_cols] = 1
    for i, seg in enumerate((2, 3, 5, 6, 7)):
        m[30, 10 + 3 * i] = seg
    return m


# ------------------------------------------------------------------- basics

def test_l1_displacement():
    assert features.l1_displacement((5, 5), (5, 5)) == 0
    assert features.l1_displacement((8, 9), (5, 5)) == 7
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.integers(-50, 50, size=(2, 2))
        assert features.l1_displacement(a, b) == features.l1_displacement(b, a)


def test_sample_arc_translation_pairs_exactly():
    rng = np.random.default_rng(4)
    steps = rng.integers(-1, 2, size=(50, 2))
    steps[(steps == 0).all(axis=1)] = (0, 1)
    arc = np.cumsum(np.vstack([[10, 10], steps]), axis=0)
    for n in (1, 3, 10, 37):
        s0 = features.sample_arc(arc, n)
        s1 = features.sample_arc(arc + (3, 4), n)
        assert np.array_equal(s1 - s0, np.tile((3, 4), (n, 1)))


# --------------------------------------------------------- boundary curves

def test_boundary_curve_static_is_zero():
    geom = wallgeom.analyze_mask(ring_mask())
    curves = features.boundary_displacement_curve([geom.arcs] * 5, 10)
    for c in curves:
        assert np.array_equal(c.values, np.zeros(5))


def test_boundary_curve_translated_arcs_exact():
    geom = wallgeom.analyze_mask(ring_mask())
    shifted = [arc + (3, 4) for arc in geom.arcs]
    for n in (1, 5, 10):
        curves = features.boundary_displacement_curve([geom.arcs, shifted], n)
        for c in curves:
            assert c.values[0] == 0.0
            assert c.values[1] == 7.0


def test_boundary_curve_full_pipeline_translation_exact():
    masks = [ring_mask(), ring_mask(dy=3, dx=4)]
    geoms = [wallgeom.analyze_mask(m) for m in masks]
    curves = features.boundary_displacement_curve([g.arcs for g in geoms], 10)
    for c in curves:
        assert c.values[1] == 7.0


def test_boundary_curve_missing_arc_reports_frame_and_segment():
    geom = wallgeom.analyze_mask(ring_mask())
    broken = list(geom.arcs)
    broken[5] = np.empty((0, 2), dtype=int)
    with pytest.raises(MissingSegmentError, match=r"frame 1.*segment 6"):
        features.boundary_displacement_curve([geom.arcs, broken], 5)


def test_boundary_curve_peak_matches_generator_geometry():
    cfg = phantom.PhantomConfig(
        image_size=96, n_frames=9, wall_thickness=7.0, base_amplitude=4.0,
        segment_amplitudes=(0.9, 1.0, 0.8, 1.0, 0.9, 1.0),
        speckle_sigma=0.0, rng_seed=5,
    )
    echo = phantom.generate_echo(cfg)
    ratios = wallgeom.SegmentRatios(apical_fraction=0.0)
    geoms = [wallgeom.analyze_mask(m, ratios) for m in echo.truth_masks]
    curves = features.boundary_displacement_curve([g.arcs for g in geoms], 10)
    for c in curves:
        expect = phantom.analytic_boundary_l1_peak(cfg, c.segment_id)
        assert abs(float(c.values.max()) - expect) <= 1.0


# ----------------------------------------------------------- center curves

def test_center_curve_static_and_translated():
    maps = [hand_maps(), hand_maps()]
    curves = features.center_displacement_curve(maps)
    assert all(np.array_equal(c.values, [0, 0]) for c in curves)
    geom = wallgeom.analyze_mask(ring_mask())
    geom2 = wallgeom.analyze_mask(ring_mask(dy=0, dx=2))
    curves = features.center_displacement_curve([geom.segment_map, geom2.segment_map])
    for c in curves:
        assert c.values[1] == pytest.approx(2.0)


def test_center_curve_matches_brute_recomputation():
    cfg = phantom.PhantomConfig(image_size=48, n_frames=5, wall_thickness=5.0,
                                base_amplitude=3.0, speckle_sigma=0.0, rng_seed=11)
    echo = phantom.generate_echo(cfg)
    maps = [wallgeom.analyze_mask(m).segment_map for m in echo.truth_masks]
    curves = features.center_displacement_curve(maps)
    for i, seg in enumerate(wallgeom.ANALYZED_SEGMENTS):
        ref = np.array(np.nonzero(maps[0] == seg)).mean(axis=1)
        for t in range(5):
            cur = np.array(np.nonzero(maps[t] == seg)).mean(axis=1)
            assert curves[i].values[t] == pytest.approx(np.abs(cur - ref).sum())


# ------------------------------------------------------------- area curves

def test_area_curve_static_keeps_reference_area():
    maps = [hand_maps()] * 4
    curves = features.area_curve(maps)
    block = curves[0]
    assert block.reference_area == 100
    assert np.array_equal(block.values, [100] * 4)


def test_area_curve_shifted_block_brute_count():
    maps = [hand_maps(0), hand_maps(5)]
    curves = features.area_curve(maps)
    # 10x10 block shifted 5 columns overlaps on a 10x5 strip
    assert curves[0].values[1] == 50
    assert curves[0].values[0] == 100


def test_area_curve_disjoint_is_zero():
    maps = [hand_maps(0), hand_maps(20)]
    curves = features.area_curve(maps)
    assert curves[0].values[1] == 0


# ------------------------------------------------------------ MF / AF maps

def make_curves(maxima):
    return [DisplacementCurve(seg, np.array([0.0, m]))
            for seg, m in zip(wallgeom.ANALYZED_SEGMENTS, maxima)]


def test_motion_feature_normalizes_to_unity():
    mf = features.motion_feature(make_curves([10, 8, 6, 4, 2, 1]))
    assert np.allclose(mf, [1.0, 0.8, 0.6, 0.4, 0.2, 0.1])


def test_motion_feature_equal_maxima():
    assert np.array_equal(features.motion_feature(make_curves([3] * 6)), np.ones(6))


def test_motion_feature_degenerate_zero():
    assert np.array_equal(features.motion_feature(make_curves([0] * 6)), np.zeros(6))


def test_motion_feature_scale_invariant():
    base = [7, 3, 5, 2, 9, 4]
    a = features.motion_feature(make_curves(base))
    for c in (0.25, 3.0, 1000.0):
        b = features.motion_feature(make_curves([c * v for v in base]))
        assert np.allclose(a, b)


def test_area_feature_values():
    assert features.area_feature(AreaCurve(1, np.array([100, 100, 100]), 100)) == 1.0
    assert features.area_feature(AreaCurve(1, np.array([100, 0, 80]), 100)) == 0.0
    assert features.area_feature(AreaCurve(1, np.array([100, 50, 80]), 100)) == 0.5


def test_area_feature_zero_reference_errors():
    with pytest.raises(MissingSegmentError):
        features.area_feature(AreaCurve(3, np.array([0.0]), 0))


def test_area_feature_antimonotone_in_amplitude_factor():
    def af_for(factor, seg_pos):
        amps = [1.0] * 6
        amps[seg_pos] = factor
        cfg = phantom.PhantomConfig(image_size=64, n_frames=9, wall_thickness=6.0,
                                    base_amplitude=4.0, segment_amplitudes=tuple(amps),
                                    speckle_sigma=0.0, rng_seed=7)
        echo = phantom.generate_echo(cfg)
        maps = [wallgeom.analyze_mask(m).segment_map for m in echo.truth_masks]
        return features.area_feature(features.area_curve(maps)[seg_pos])

    for pos in (0, 2, 4):
        ladder = [af_for(f, pos) for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert all(b <= a + 1e-12 for a, b in zip(ladder, ladder[1:]))


# --------------------------------------------------------- extract_features

def static_echo_masks(n=4):
    cfg = phantom.PhantomConfig(image_size=48, n_frames=n, wall_thickness=5.0,
                                base_amplitude=0.0, speckle_sigma=0.0, rng_seed=1)
    return phantom.generate_echo(cfg).truth_masks


def test_extract_six_segment_layout():
    fv = features.extract_features(static_echo_masks(), mode=features.SIX_SEGMENT)
    assert len(fv.values) == 18
    assert fv.names[:3] == ["mf_boundary_s1", "mf_center_s1", "af_s1"]
    assert fv.names[-3:] == ["mf_boundary_s7", "mf_center_s7", "af_s7"]


def test_extract_five_segment_drops_segment5():
    fv = features.extract_features(static_echo_masks(), mode=features.FIVE_SEGMENT)
    assert len(fv.values) == 15
    assert not any("s5" in n for n in fv.names)
    assert any("s6" in n for n in fv.names)


def test_extract_static_echo_mf_zero_af_one():
    fv = features.extract_features(static_echo_masks())
    mf = [v for n, v in zip(fv.names, fv.values) if n.startswith("mf_")]
    af = [v for n, v in zip(fv.names, fv.values) if n.startswith("af_")]
    assert np.array_equal(mf, np.zeros(12))
    assert np.array_equal(af, np.ones(6))


def test_extract_values_in_unit_interval_and_mf_max_is_one():
    cfg = phantom.PhantomConfig(image_size=48, n_frames=7, wall_thickness=5.0,
                                base_amplitude=3.0, segment_amplitudes=(1, 1, 0.2, 1, 0.8, 1),
                                speckle_sigma=0.0, rng_seed=8)
    echo = phantom.generate_echo(cfg)
    fv = features.extract_features(echo.truth_masks)
    assert np.all(fv.values >= 0) and np.all(fv.values <= 1)
    for prefix in ("mf_boundary", "mf_center"):
        fam = [v for n, v in zip(fv.names, fv.values) if n.startswith(prefix)]
        assert max(fam) == 1.0


def test_extract_geometry_error_carries_frame_index():
    masks = list(static_echo_masks(3))
    masks[2] = np.zeros_like(masks[2])
    masks[2][10:20, 10:20] = True  # solid block, no cavity
    with pytest.raises(Exception, match="frame 2"):
        features.extract_features(masks)


# ------------------------------------------------------------------ csv io

def test_curves_csv_layout(tmp_path):
    curves = make_curves([1, 2, 3, 4, 5, 6])
    p = tmp_path / "curves.csv"
    features.write_curves_csv(p, curves)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "frame,seg1,seg2,seg3,seg5,seg6,seg7"
    assert lines[1] == "0,0,0,0,0,0,0"
    assert lines[2] == "1,1,2,3,4,5,6"


def test_features_csv_roundtrip(tmp_path):
    fv = features.extract_features(static_echo_masks())
    p = tmp_path / "features.csv"
    features.write_features_csv(p, [("echo_0000", True, fv), ("echo_0001", False, fv)])
    ids, X, y, names = features.read_features_csv(p)
    assert ids == ["echo_0000", "echo_0001"]
    assert list(y) == [1, 0]
    assert X.shape == (2, 18)
    assert names == fv.names
    assert np.allclose(X[0], fv.values)
