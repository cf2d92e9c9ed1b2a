"""Raster and region machinery: connected components, exact Euclidean and
geodesic distance maps, seeded watershed, regional maxima, region properties.

Conventions used throughout the package:

* rasters are numpy arrays of shape ``(height, width)`` indexed ``[y, x]``;
* label rasters are integer arrays where 0 is background;
* coordinates exposed on :class:`CellRegion` (medoid, centroid, contours) are
  ``(x, y)`` pairs;
* distances are measured between pixel centers on the integer grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from ._kernels import SQRT2, geodesic_steps, watershed_flood

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(eq=False)
class CellRegion:
    """Derived summary of one labeled region on one frame."""

    label: int
    frame_index: int
    xs: np.ndarray  # pixel x coordinates, int
    ys: np.ndarray  # pixel y coordinates, int (same order as xs)
    area: int
    medoid: tuple[int, int]  # (x, y), guaranteed inside the region
    centroid: tuple[float, float]  # (x, y)
    major_axis_angle: float  # radians in [0, pi)
    major_axis_length: float
    eccentricity: float  # in [0, 1]
    contour_xs: np.ndarray
    contour_ys: np.ndarray
    touches_edge: bool

    @property
    def key(self) -> tuple[int, int]:
        return (self.frame_index, self.label)

    def pixel_set(self) -> set[tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))


def _padded_slice(slc, shape, pad=1):
    ys, xs = slc
    return (
        slice(max(ys.start - pad, 0), min(ys.stop + pad, shape[0])),
        slice(max(xs.start - pad, 0), min(xs.stop + pad, shape[1])),
    )


def relabel_components(labels: np.ndarray) -> np.ndarray:
    """Split every nonzero label into its 4-connected components.

    Output labels are consecutive ``1..K``, ordered by each component's first
    pixel in raster-scan order. Touching components of *different* input
    labels stay separate.
    """
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, np.int32)
    h, w = labels.shape
    pieces = []  # (first scan rank, slice, component mask)
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        mask = labels[slc] == lab
        comp, n = ndi.label(mask, FOUR_CONN)
        if n == 0:
            continue
        yy, xx = np.nonzero(comp)
        ranks = (yy + slc[0].start) * w + (xx + slc[1].start)
        first = ndi.minimum(ranks, comp[yy, xx], index=np.arange(1, n + 1))
        for k in range(1, n + 1):
            pieces.append((int(np.atleast_1d(first)[k - 1]), slc, comp == k))
    pieces.sort(key=lambda item: item[0])
    for new_label, (_, slc, mask) in enumerate(pieces, start=1):
        out[slc][mask] = new_label
    return out


def compute_edm(labels: np.ndarray) -> np.ndarray:
    """Exact per-cell Euclidean distance map.

    Inside each cell the value is the distance from the pixel center to the
    nearest pixel center that does not belong to the same cell (background or
    any other cell). Background pixels get -1.
    """
    labels = np.asarray(labels)
    out = np.full(labels.shape, -1.0, np.float64)
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        # the nearest non-self pixel always lies within the bbox padded by one
        pslc = _padded_slice(slc, labels.shape)
        mask = labels[pslc] == lab
        dist = ndi.distance_transform_edt(mask)
        view = out[pslc]
        view[mask] = dist[mask]
    return out


def geodesic_map(mask: np.ndarray, source_xy: tuple[int, int]) -> np.ndarray:
    """Shortest-path distance within ``mask`` from ``source_xy``.

    Paths move on the 8-connected graph of mask pixels with step costs 1
    (axis) and sqrt(2) (diagonal). Returns a float raster with -1 outside the
    reachable part of the mask and 0 at the source.
    """
    mask = np.asarray(mask, bool)
    sx, sy = source_xy
    if not (0 <= sy < mask.shape[0] and 0 <= sx < mask.shape[1]) or not mask[sy, sx]:
        raise ValueError(f"geodesic source ({sx}, {sy}) is outside the region")
    slc = ndi.find_objects(mask.astype(np.int8))[0]
    crop = np.ascontiguousarray(mask[slc])
    ax, dg = geodesic_steps(crop, sy - slc[0].start, sx - slc[1].start)
    out = np.full(mask.shape, -1.0, np.float64)
    reach = ax >= 0
    dist = np.where(reach, ax + dg * SQRT2, -1.0)
    out[slc] = dist
    return out


def medoid_of(xs: np.ndarray, ys: np.ndarray) -> tuple[int, int]:
    """Pixel minimizing the summed Euclidean distance to all given pixels.

    Ties are broken by the smallest (y, x). Exact (no sampling), evaluated in
    chunks so large regions do not allocate an n x n matrix at once.
    """
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    n = xs.size
    if n == 1:
        return int(xs[0]), int(ys[0])
    sums = np.zeros(n, np.float64)
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        dx = xs[start : start + chunk, None] - xs[None, :]
        dy = ys[start : start + chunk, None] - ys[None, :]
        sums[start : start + chunk] = np.sqrt(dx * dx + dy * dy).sum(axis=1)
    order = np.lexsort((xs, ys, sums))
    best = order[0]
    return int(xs[best]), int(ys[best])


def compute_medoid(region: CellRegion) -> tuple[int, int]:
    return medoid_of(region.xs, region.ys)


def watershed(
    landscape: np.ndarray,
    seeds: np.ndarray,
    mask_threshold: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Priority-flood watershed ascending from seed maxima.

    Floods outward from the nonzero pixels of ``seeds``, restricted to pixels
    where ``landscape > mask_threshold`` (intersected with ``mask`` when
    given). Pixels are processed in decreasing landscape order, ties broken by
    raster-scan order; growth is 4-connected. Masked pixels unreachable from
    any seed stay background.
    """
    landscape = np.ascontiguousarray(landscape, np.float64)
    eligible = landscape > mask_threshold
    if mask is not None:
        eligible &= np.asarray(mask, bool)
    labels = np.where(eligible, seeds, 0).astype(np.int32)
    if not labels.any():
        return np.zeros(landscape.shape, np.int32)
    watershed_flood(landscape, labels, eligible)
    return labels


def regional_maxima(
    landscape: np.ndarray,
    mask_threshold: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Label the regional maxima of ``landscape`` above ``mask_threshold``.

    A regional maximum is an 8-connected plateau of equal values that is
    strictly greater than every 8-neighbor outside the plateau. Output labels
    are consecutive, ordered by first-scan pixel.
    """
    landscape = np.asarray(landscape, np.float64)
    eligible = landscape > mask_threshold
    if mask is not None:
        eligible &= np.asarray(mask, bool)
    if not eligible.any():
        return np.zeros(landscape.shape, np.int32)
    dil = ndi.grey_dilation(landscape, footprint=EIGHT_CONN, mode="constant", cval=-np.inf)
    cand = eligible & (landscape == dil)
    comp, n = ndi.label(cand, EIGHT_CONN)
    out = np.zeros(landscape.shape, np.int32)
    next_label = 1
    for k, slc in enumerate(ndi.find_objects(comp), start=1):
        if slc is None:
            continue
        pslc = _padded_slice(slc, landscape.shape)
        cmask = comp[pslc] == k
        ext = ndi.binary_dilation(cmask, EIGHT_CONN) & ~cmask
        value = landscape[pslc][cmask][0]
        if np.all(landscape[pslc][ext] < value):
            out[pslc][cmask] = next_label
            next_label += 1
    return out


def _axis_from_moments(xs, ys):
    cx = xs.mean()
    cy = ys.mean()
    dx = xs - cx
    dy = ys - cy
    mu20 = np.mean(dx * dx)
    mu02 = np.mean(dy * dy)
    mu11 = np.mean(dx * dy)
    common = math.sqrt(((mu20 - mu02) / 2.0) ** 2 + mu11 * mu11)
    l1 = (mu20 + mu02) / 2.0 + common
    l2 = (mu20 + mu02) / 2.0 - common
    if l1 <= 0:
        return (cx, cy), 0.0, 0.0, 0.0
    angle = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)
    if angle < 0:
        angle += math.pi
    if angle >= math.pi:
        angle -= math.pi
    ecc = math.sqrt(max(0.0, 1.0 - l2 / l1))
    return (cx, cy), angle, 4.0 * math.sqrt(l1), ecc


def _build_region(mask, slc, label, frame_index, image_shape) -> CellRegion:
    h, w = image_shape
    yy, xx = np.nonzero(mask)
    ys = yy + slc[0].start
    xs = xx + slc[1].start
    centroid, angle, axis_len, ecc = _axis_from_moments(
        xs.astype(np.float64), ys.astype(np.float64)
    )
    medoid = medoid_of(xs, ys)
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), bool)
    padded[1:-1, 1:-1] = mask
    interior = (
        mask
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    cyy, cxx = np.nonzero(mask & ~interior)
    return CellRegion(
        label=int(label),
        frame_index=frame_index,
        xs=xs,
        ys=ys,
        area=int(xs.size),
        medoid=medoid,
        centroid=centroid,
        major_axis_angle=angle,
        major_axis_length=axis_len,
        eccentricity=ecc,
        contour_xs=cxx + slc[1].start,
        contour_ys=cyy + slc[0].start,
        touches_edge=bool(
            ys.min() == 0 or xs.min() == 0 or ys.max() == h - 1 or xs.max() == w - 1
        ),
    )


def region_properties(labels: np.ndarray, frame_index: int = 0) -> list[CellRegion]:
    """One :class:`CellRegion` per label, in increasing label order.

    Major axis and eccentricity come from the second central moments of the
    pixel coordinates (ellipse-equivalent convention). Contour pixels are
    region pixels with at least one 4-neighbor outside the region; pixels on
    the image border count their missing neighbors as outside.
    """
    labels = np.asarray(labels)
    regions = []
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        mask = labels[slc] == lab
        regions.append(_build_region(mask, slc, lab, frame_index, labels.shape))
    return regions


def region_of(labels: np.ndarray, label: int, frame_index: int = 0) -> CellRegion:
    """Region summary for a single label of a raster."""
    labels = np.asarray(labels)
    ys, xs = np.nonzero(labels == label)
    if xs.size == 0:
        raise KeyError(f"label {label} not present")
    slc = (slice(ys.min(), ys.max() + 1), slice(xs.min(), xs.max() + 1))
    mask = labels[slc] == label
    return _build_region(mask, slc, label, frame_index, labels.shape)


def contour_distance(a: CellRegion, b: CellRegion) -> float:
    """Minimum Euclidean distance between the contour pixels of two regions."""
    ax = a.contour_xs.astype(np.float64)
    ay = a.contour_ys.astype(np.float64)
    bx = b.contour_xs.astype(np.float64)
    by = b.contour_ys.astype(np.float64)
    best = np.inf
    chunk = max(1, 2_000_000 // max(bx.size, 1))
    for start in range(0, ax.size, chunk):
        dx = ax[start : start + chunk, None] - bx[None, :]
        dy = ay[start : start + chunk, None] - by[None, :]
        d2 = dx * dx + dy * dy
        best = min(best, float(d2.min()))
    return math.sqrt(best)
