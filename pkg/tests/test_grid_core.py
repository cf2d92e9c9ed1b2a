import math

import numpy as np
import pytest

from celltrack.grid import (
    compute_edm,
    contour_distance,
    geodesic_map,
    medoid_of,
    region_properties,
    regional_maxima,
    relabel_components,
    watershed,
)
from oracles import (
    SQRT2,
    brute_edm,
    exhaustive_medoid,
    flood_fill_labels,
    geodesic_fixpoint,
    min_contour_distance,
    plateau_maxima,
    random_blob_scene,
    same_partition,
    steepest_ascent_basins,
)


# ---------------------------------------------------------------- relabel


def test_relabel_empty():
    out = relabel_components(np.zeros((5, 5), int))
    assert out.max() == 0


def test_relabel_diagonal_split():
    lab = np.zeros((3, 3), int)
    lab[0, 0] = 7
    lab[1, 1] = 7
    out = relabel_components(lab)
    assert out[0, 0] == 1 and out[1, 1] == 2


def test_relabel_touching_different_labels_stay_separate():
    lab = np.zeros((2, 4), int)
    lab[:, :2] = 3
    lab[:, 2:] = 9
    out = relabel_components(lab)
    assert out[0, 0] != out[0, 2]
    assert sorted(np.unique(out[out > 0]).tolist()) == [1, 2]


def test_relabel_matches_flood_fill_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        lab = (rng.random((32, 32)) < 0.35).astype(int) * rng.integers(1, 4)
        out = relabel_components(lab)
        ref = flood_fill_labels(lab)
        assert same_partition(out, ref)
        # consecutive scan-ordered labels match the scan-ordered oracle exactly
        assert np.array_equal(out, ref)


# ---------------------------------------------------------------- EDM


def test_edm_single_pixel():
    lab = np.zeros((5, 5), int)
    lab[2, 2] = 1
    edm = compute_edm(lab)
    assert edm[2, 2] == 1.0
    assert (edm[lab == 0] == -1.0).all()


def test_edm_square_3x3():
    lab = np.zeros((5, 5), int)
    lab[1:4, 1:4] = 1
    edm = compute_edm(lab)
    expected = brute_edm(lab)
    assert np.array_equal(edm, expected)
    assert edm[2, 2] == 2.0
    border = lab.copy()
    border[2, 2] = 0
    assert (edm[border == 1] == 1.0).all()


def test_edm_touching_bars_use_other_cell():
    # two 1x3 bars stacked vertically: every pixel is 1.0 from the other bar
    lab = np.zeros((4, 5), int)
    lab[1, 1:4] = 1
    lab[2, 1:4] = 2
    edm = compute_edm(lab)
    assert np.array_equal(edm, brute_edm(lab))
    assert (edm[1, 1:4] == 1.0).all()
    assert (edm[2, 1:4] == 1.0).all()


def test_edm_random_scenes_match_brute_force_exactly():
    rng = np.random.default_rng(123)
    for _ in range(30):
        lab = relabel_components(random_blob_scene(rng, n_blobs=5))
        assert np.array_equal(compute_edm(lab), brute_edm(lab))


# ---------------------------------------------------------------- geodesic


def test_geodesic_straight_bar():
    mask = np.ones((1, 5), bool)
    g = geodesic_map(mask, (0, 0))
    assert np.array_equal(g, [[0.0, 1.0, 2.0, 3.0, 4.0]])


def test_geodesic_u_shape():
    # two vertical arms joined at the bottom; tips are 2 apart in a straight
    # line but the in-mask path is 4 axial + 2 diagonal steps
    mask = np.zeros((4, 3), bool)
    mask[:, 0] = True
    mask[:, 2] = True
    mask[3, 1] = True
    g = geodesic_map(mask, (0, 0))
    expected = 4.0 + 2.0 * SQRT2
    assert g[0, 2] == expected
    assert np.allclose(g[0, 2], geodesic_fixpoint(mask, (0, 0))[0, 2])


def test_geodesic_source_is_zero_and_outside_raises():
    mask = np.zeros((4, 4), bool)
    mask[1:3, 1:3] = True
    g = geodesic_map(mask, (1, 1))
    assert g[1, 1] == 0.0
    with pytest.raises(ValueError):
        geodesic_map(mask, (0, 0))


def test_geodesic_matches_fixpoint_oracle_and_bounds_euclidean():
    rng = np.random.default_rng(5)
    for _ in range(15):
        mask = rng.random((10, 10)) < 0.6
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            continue
        k = rng.integers(0, xs.size)
        sy, sx = int(ys[k]), int(xs[k])
        g = geodesic_map(mask, (sx, sy))
        ref = geodesic_fixpoint(mask, (sx, sy))
        assert np.array_equal(g, ref)
        ry, rx = np.nonzero(g >= 0)
        eu = np.hypot(ry - sy, rx - sx)
        assert (g[ry, rx] >= eu - 1e-12).all()


# ---------------------------------------------------------------- medoid


def test_medoid_single_pixel_and_bar():
    assert medoid_of(np.array([3]), np.array([4])) == (3, 4)
    xs = np.arange(5)
    ys = np.zeros(5, int)
    assert medoid_of(xs, ys) == (2, 0)


def test_medoid_c_shape_contained():
    # ring with a gap: centroid falls in the hole, medoid must not
    lab = np.zeros((5, 5), int)
    lab[0, :] = 1
    lab[4, :] = 1
    lab[:, 0] = 1
    lab[2, 4] = 0
    regions = region_properties(relabel_components(lab))
    region = regions[0]
    mx, my = region.medoid
    assert (mx, my) in region.pixel_set()
    assert exhaustive_medoid(region.xs.tolist(), region.ys.tolist()) == (mx, my)


def test_medoid_matches_exhaustive_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        mask = rng.random((8, 8)) < 0.4
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            continue
        assert medoid_of(xs, ys) == exhaustive_medoid(xs.tolist(), ys.tolist())


def test_medoid_translation_and_rotation_invariance():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 15:
        mask = rng.random((7, 7)) < 0.45
        ys, xs = np.nonzero(mask)
        if xs.size < 3:
            continue
        sums = [
            sum(math.hypot(x0 - x, y0 - y) for x, y in zip(xs, ys))
            for x0, y0 in zip(xs, ys)
        ]
        if sorted(sums)[0] == sorted(sums)[1]:  # tie: ordering not equivariant
            continue
        mx, my = medoid_of(xs, ys)
        tx, ty = medoid_of(xs + 13, ys + 5)
        assert (tx, ty) == (mx + 13, my + 5)
        # rotate 90 degrees: (x, y) -> (y, 6 - x)
        rx, ry = medoid_of(ys, 6 - xs)
        assert (rx, ry) == (my, 6 - mx)
        checked += 1


# ---------------------------------------------------------------- watershed


def _two_bump_landscape():
    yy, xx = np.mgrid[0:16, 0:16].astype(float)
    land = np.exp(-((yy - 4) ** 2 + (xx - 4) ** 2) / (2 * 2.5**2))
    land += np.exp(-((yy - 11) ** 2 + (xx - 11) ** 2) / (2 * 2.5**2))
    # tiny distinct-value tilt so ascent paths are unique
    land += (yy * 16 + xx) * 1e-9
    return land


def test_watershed_two_bumps_match_ascent_oracle():
    land = _two_bump_landscape()
    seeds = regional_maxima(land, 0.05)
    assert seeds.max() == 2
    out = watershed(land, seeds, 0.05)
    ref = steepest_ascent_basins(land, seeds, 0.05)
    assert np.array_equal(out, ref)


def test_watershed_uniform_plateau_single_seed():
    land = np.ones((6, 6))
    seeds = np.zeros((6, 6), np.int32)
    seeds[2, 3] = 1
    out = watershed(land, seeds, 0.0)
    assert (out == 1).all()


def test_watershed_empty_when_all_below_threshold():
    land = np.zeros((4, 4))
    seeds = np.zeros((4, 4), np.int32)
    seeds[1, 1] = 1
    out = watershed(land, seeds, 0.5)
    assert out.max() == 0


def test_watershed_partitions_reachable_mask():
    rng = np.random.default_rng(3)
    for _ in range(10):
        land = rng.random((12, 12))
        seeds = regional_maxima(land, 0.5)
        out = watershed(land, seeds, 0.5)
        labeled = out > 0
        # labels only on eligible pixels, all seed pixels kept
        assert not (labeled & ~(land > 0.5)).any()
        assert set(np.unique(out[out > 0]).tolist()) <= set(
            np.unique(seeds[seeds > 0]).tolist()
        )
        assert ((seeds > 0) <= labeled).all()


# ---------------------------------------------------------------- maxima


def test_maxima_single_peak():
    land = np.zeros((5, 5))
    land[2, 2] = 3.0
    out = regional_maxima(land, 0.0)
    assert out[2, 2] == 1 and (out > 0).sum() == 1


def test_maxima_flat_ridge_is_one_plateau():
    land = np.zeros((3, 7))
    land[1, 2:5] = 2.0
    out = regional_maxima(land, 0.0)
    assert (out[1, 2:5] == 1).all() and (out > 0).sum() == 3


def test_maxima_ramp_top_only():
    land = np.arange(7, dtype=float)[None, :] + 1
    out = regional_maxima(land, 0.0)
    assert out[0, 6] == 1 and (out > 0).sum() == 1


def test_maxima_matches_plateau_oracle():
    rng = np.random.default_rng(9)
    for _ in range(25):
        land = np.round(rng.random((12, 12)) * 5) / 5.0
        out = regional_maxima(land, 0.3)
        ref = plateau_maxima(land, 0.3)
        assert same_partition(out, ref)


# ---------------------------------------------------------------- properties


def test_properties_bar_moments():
    lab = np.zeros((3, 11), int)
    lab[1, 1:10] = 1
    region = region_properties(lab)[0]
    assert region.major_axis_angle == 0.0
    assert region.eccentricity > 0.99
    assert region.medoid == (5, 1)


def test_properties_square_isotropic():
    lab = np.zeros((7, 7), int)
    lab[1:6, 1:6] = 1
    region = region_properties(lab)[0]
    assert region.eccentricity == 0.0
    assert region.area == 25


def test_properties_disk_centroid():
    yy, xx = np.mgrid[0:15, 0:15]
    lab = (((yy - 7) ** 2 + (xx - 7) ** 2) <= 36).astype(int)
    region = region_properties(lab)[0]
    cx, cy = region.centroid
    assert abs(cx - 7) <= 0.1 and abs(cy - 7) <= 0.1


def test_properties_area_sum_and_edges():
    rng = np.random.default_rng(21)
    lab = relabel_components(random_blob_scene(rng, n_blobs=6))
    regions = region_properties(lab)
    assert sum(r.area for r in regions) == int((lab > 0).sum())
    edge = np.zeros((5, 5), int)
    edge[0, 2] = 1
    assert region_properties(edge)[0].touches_edge
    interior = np.zeros((5, 5), int)
    interior[2, 2] = 1
    assert not region_properties(interior)[0].touches_edge


def test_contour_is_boundary_pixels():
    lab = np.zeros((6, 6), int)
    lab[1:5, 1:5] = 1
    region = region_properties(lab)[0]
    contour = set(zip(region.contour_xs.tolist(), region.contour_ys.tolist()))
    assert (2, 2) not in contour and (3, 3) not in contour
    assert len(contour) == 12


# ---------------------------------------------------------------- contours


def test_contour_distance_adjacent_and_self():
    lab = np.zeros((3, 4), int)
    lab[1, 1] = 1
    lab[1, 2] = 2
    a, b = region_properties(lab)
    assert contour_distance(a, b) == 1.0
    assert contour_distance(a, a) == 0.0


def test_contour_distance_matches_all_pairs_oracle():
    rng = np.random.default_rng(17)
    for _ in range(15):
        lab = relabel_components(random_blob_scene(rng, n_blobs=3, r_range=(1.5, 3.0)))
        regions = region_properties(lab)
        if len(regions) < 2:
            continue
        a, b = regions[0], regions[1]
        expected = min_contour_distance(
            a.contour_xs.tolist(), a.contour_ys.tolist(),
            b.contour_xs.tolist(), b.contour_ys.tolist(),
        )
        assert contour_distance(a, b) == pytest.approx(expected, abs=1e-12)
