"""Instance extraction from (possibly noisy) EDM + GDCM proxy maps.

Pipeline: seeded watershed on the EDM (intentionally over-segmenting), center
detection on the Gaussian-transformed GDCM via a Laplacian-of-Gaussian
watershed, then a center-driven merge of fragments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .grid import regional_maxima, region_properties, relabel_components, watershed


@dataclass
class SegmentationParams:
    edm_threshold: float = 0.5
    center_sigma_fraction: float = 0.25  # fraction of the object thickness
    center_sigma_bounds: tuple[float, float] = (1.0, 3.0)
    amplitude_ratio_threshold: float = 0.5
    expected_center_size: float | None = None  # None: per-frame median of candidates
    center_size_bounds: tuple[float, float] = (0.5, 2.0)
    center_eccentricity_max: float = 0.9
    thickness: float | None = None  # overrides the EDM-based thickness estimate


@dataclass
class Centers:
    """Detected center regions with their intensity amplitudes."""

    labels: np.ndarray
    amplitude: dict[int, float] = field(default_factory=dict)
    peak: dict[int, tuple[int, int]] = field(default_factory=dict)  # (x, y)


def segment_edm(edm: np.ndarray, params: SegmentationParams) -> np.ndarray:
    """Watershed on the EDM seeded from its regional maxima (may over-segment)."""
    seeds = regional_maxima(edm, params.edm_threshold)
    return watershed(edm, seeds, params.edm_threshold)


def estimate_sigma(edm: np.ndarray, params: SegmentationParams) -> float:
    """Center-detection scale: a fraction of the object thickness, clamped.

    Thickness is estimated as twice the mean positive EDM value (the EDM along
    the medial axis is about half the thickness).
    """
    if params.thickness is not None:
        thickness = params.thickness
    else:
        positive = edm[edm > 0]
        thickness = 2.0 * float(positive.mean()) if positive.size else 0.0
    lo, hi = params.center_sigma_bounds
    return float(min(max(params.center_sigma_fraction * thickness, lo), hi))


def detect_centers(
    gdcm: np.ndarray,
    foreground: np.ndarray,
    params: SegmentationParams,
    sigma: float,
) -> Centers:
    """Segment cell centers from the GDCM.

    The Gaussian function exp(-d^2 / 2 sigma^2) / (sqrt(2 pi) sigma) is applied
    pointwise to the GDCM (background counts as infinitely far, so 0), a
    Laplacian of Gaussian response at scale sigma is computed, and center
    regions are the watershed basins of the negated response seeded at its
    regional maxima, restricted to the foreground and to the negative-response
    core. Candidates outside the size bounds or above the eccentricity cap are
    dropped. A center's amplitude is the maximum Gaussian-transformed value
    inside it.
    """
    foreground = np.asarray(foreground, bool)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * sigma)
    g = np.zeros(gdcm.shape, np.float64)
    g[foreground] = np.exp(-(gdcm[foreground] ** 2) / (2.0 * sigma * sigma)) * norm
    response = -ndi.laplace(ndi.gaussian_filter(g, sigma))
    seeds = regional_maxima(response, 0.0, mask=foreground)
    basins = watershed(response, seeds, 0.0, mask=foreground)
    candidates = region_properties(basins)
    expected = params.expected_center_size
    if expected is None and candidates:
        expected = float(np.median([c.area for c in candidates]))
    lo, hi = params.center_size_bounds
    out = np.zeros(gdcm.shape, np.int32)
    centers = Centers(labels=out)
    next_label = 1
    for cand in candidates:
        if expected is not None and not (lo * expected <= cand.area <= hi * expected):
            continue
        if cand.eccentricity > params.center_eccentricity_max:
            continue
        values = g[cand.ys, cand.xs]
        peak = int(np.argmax(values))
        out[cand.ys, cand.xs] = next_label
        centers.amplitude[next_label] = float(values[peak])
        centers.peak[next_label] = (int(cand.xs[peak]), int(cand.ys[peak]))
        next_label += 1
    return centers


def _adjacent_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs = set()
    for a, b in (
        (labels[:, :-1], labels[:, 1:]),
        (labels[:-1, :], labels[1:, :]),
    ):
        touch = (a != b) & (a > 0) & (b > 0)
        if touch.any():
            va = a[touch]
            vb = b[touch]
            lo = np.minimum(va, vb)
            hi = np.maximum(va, vb)
            pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def merge_fragments(
    fragments: np.ndarray,
    centers: Centers,
    params: SegmentationParams,
) -> np.ndarray:
    """Merge touching fragments driven by the detected centers.

    Two adjacent fragments merge when at least one of them contains no center,
    or when both do but the ratio of their center amplitudes falls below the
    threshold. Merges repeat to a fixpoint; candidate pairs are processed
    lowest-label-pair first, and merged groups pool their centers (amplitude =
    max). The union of foreground pixels never changes.
    """
    n = int(fragments.max())
    if n == 0:
        return np.zeros(fragments.shape, np.int32)
    parent = list(range(n + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    group_amp: dict[int, float] = {i: -1.0 for i in range(1, n + 1)}  # -1: no center
    for lab, (px, py) in centers.peak.items():
        frag = int(fragments[py, px])
        if frag > 0:
            group_amp[frag] = max(group_amp[frag], centers.amplitude[lab])

    raw_pairs = _adjacent_pairs(fragments)
    while True:
        canonical = sorted({tuple(sorted((find(a), find(b)))) for a, b in raw_pairs})
        merged = False
        for a, b in canonical:
            if a == b:
                continue
            amp_a = group_amp[a]
            amp_b = group_amp[b]
            no_center = amp_a < 0 or amp_b < 0
            weak_ratio = (
                not no_center
                and min(amp_a, amp_b) / max(amp_a, amp_b) < params.amplitude_ratio_threshold
            )
            if no_center or weak_ratio:
                root, other = (a, b) if a < b else (b, a)
                parent[other] = root
                group_amp[root] = max(amp_a, amp_b)
                merged = True
                break
        if not merged:
            break

    mapping = np.arange(n + 1, dtype=np.int32)
    for i in range(1, n + 1):
        mapping[i] = find(i)
    return relabel_components(mapping[fragments])


def segment_frame(
    edm: np.ndarray,
    gdcm: np.ndarray,
    params: SegmentationParams | None = None,
) -> np.ndarray:
    """Full per-frame segmentation: EDM watershed, centers, fragment merge."""
    if params is None:
        params = SegmentationParams()
    fragments = segment_edm(edm, params)
    if fragments.max() == 0:
        return fragments
    foreground = edm > params.edm_threshold
    sigma = estimate_sigma(edm, params)
    centers = detect_centers(gdcm, foreground, params, sigma)
    return merge_fragments(fragments, centers, params)
