"""Training-target proxy maps generated from a labeled, linked video.

Per frame: the exact Euclidean distance map (EDM, -1 on background) and the
geodesic distance-to-center map (GDCM, 0 on background and at each cell's
medoid). Per frame pair and direction: per-axis center displacement rasters
and three-channel link-multiplicity probability rasters P(=0), P(=1), P(>1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from ._kernels import SQRT2, geodesic_steps
from .graph import TrackGraph
from .grid import compute_edm, medoid_of

MULT_CHANNELS = ("zero", "one", "many")


@dataclass(frozen=True)
class FrameWindow:
    """Gapped frame window of ``n_frames`` (odd) centered on ``center``.

    Indices are the three central frames plus ``(n_frames - 3) / 2`` frames on
    each side spaced ``gap`` apart, clamped to the video range (boundary
    frames repeat).
    """

    center: int
    n_frames: int
    gap: int
    indices: tuple[int, ...]

    @property
    def span(self) -> int:
        return (self.n_frames - 3) * self.gap + 3


def make_window(center: int, n_frames: int, gap: int, video_length: int) -> FrameWindow:
    if video_length < 1:
        raise ValueError("video_length must be >= 1")
    if n_frames < 3 or n_frames % 2 == 0:
        raise ValueError("n_frames must be an odd integer >= 3")
    if gap < 1:
        raise ValueError("gap must be >= 1")
    m = (n_frames - 3) // 2
    raw = (
        [center - 1 - k * gap for k in range(m, 0, -1)]
        + [center - 1, center, center + 1]
        + [center + 1 + k * gap for k in range(1, m + 1)]
    )
    clamped = tuple(min(max(i, 0), video_length - 1) for i in raw)
    return FrameWindow(center=center, n_frames=n_frames, gap=gap, indices=clamped)


def make_pairs(window: FrameWindow) -> list[tuple[int, int]]:
    """The 2N-4 frame pairs of a window.

    N-1 pairs between consecutive window frames, then N-3 pairs between the
    central frame and every window frame except its two direct neighbors.
    Pairs are positional, so clamped (duplicated) boundary frames still yield
    the full pair count.
    """
    idx = window.indices
    n = window.n_frames
    m = (n - 3) // 2
    pairs = [(idx[i], idx[i + 1]) for i in range(n - 1)]
    center = idx[m + 1]
    for j in range(n):
        if j in (m, m + 1, m + 2):
            continue
        pairs.append((center, idx[j]))
    return pairs


@dataclass
class ProxyFrame:
    edm: np.ndarray
    gdcm: np.ndarray


@dataclass
class ProxyPair:
    frame_a: int
    frame_b: int
    fwd_dx: np.ndarray
    fwd_dy: np.ndarray
    bwd_dx: np.ndarray
    bwd_dy: np.ndarray
    fwd_mult: np.ndarray  # (3, h, w): P(=0), P(=1), P(>1)
    bwd_mult: np.ndarray


def cell_medoids(labels: np.ndarray) -> dict[int, tuple[int, int]]:
    """Medoid (x, y) per label."""
    out = {}
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        yy, xx = np.nonzero(labels[slc] == lab)
        out[lab] = medoid_of(xx + slc[1].start, yy + slc[0].start)
    return out


def gdcm_of(labels: np.ndarray, medoids: dict[int, tuple[int, int]] | None = None) -> np.ndarray:
    """Geodesic distance to each cell's medoid; 0 on background."""
    if medoids is None:
        medoids = cell_medoids(labels)
    out = np.zeros(labels.shape, np.float64)
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        mask = np.ascontiguousarray(labels[slc] == lab)
        mx, my = medoids[lab]
        ax, dg = geodesic_steps(mask, my - slc[0].start, mx - slc[1].start)
        inside = ax >= 0
        view = out[slc]
        view[inside] = ax[inside] + dg[inside] * SQRT2
    return out


def make_proxy_frame(labels: np.ndarray) -> ProxyFrame:
    return ProxyFrame(edm=compute_edm(labels), gdcm=gdcm_of(labels))


def make_proxy_pair(
    labels_a: np.ndarray,
    labels_b: np.ndarray,
    links: list[tuple[int, int]],
    medoids_a: dict[int, tuple[int, int]] | None = None,
    medoids_b: dict[int, tuple[int, int]] | None = None,
) -> ProxyPair:
    """Displacement and link-multiplicity rasters for one frame pair.

    ``links`` are (label_a, label_b) pairs. Forward maps live on frame-a
    cells: cells with exactly one link get the per-axis medoid displacement
    (center_b - center_a); cells with zero or several links get 0. Backward
    maps mirror this on frame-b cells. Multiplicity triples are one-hot per
    cell by link count ({0, 1, >1}); background is P(=0)=1.
    """
    if medoids_a is None:
        medoids_a = cell_medoids(labels_a)
    if medoids_b is None:
        medoids_b = cell_medoids(labels_b)
    fwd: dict[int, list[int]] = {lab: [] for lab in medoids_a}
    bwd: dict[int, list[int]] = {lab: [] for lab in medoids_b}
    for la, lb in links:
        if la not in medoids_a:
            raise ValueError(f"link references missing label {la} in frame {0}")
        if lb not in medoids_b:
            raise ValueError(f"link references missing label {lb} in the pair frame")
        fwd[la].append(lb)
        bwd[lb].append(la)

    shape = labels_a.shape
    pair = ProxyPair(
        frame_a=0,
        frame_b=0,
        fwd_dx=np.zeros(shape),
        fwd_dy=np.zeros(shape),
        bwd_dx=np.zeros(shape),
        bwd_dy=np.zeros(shape),
        fwd_mult=np.zeros((3,) + shape),
        bwd_mult=np.zeros((3,) + shape),
    )
    pair.fwd_mult[0] = 1.0
    pair.bwd_mult[0] = 1.0
    _write_direction(pair.fwd_dx, pair.fwd_dy, pair.fwd_mult, labels_a, fwd, medoids_a, medoids_b)
    _write_direction(pair.bwd_dx, pair.bwd_dy, pair.bwd_mult, labels_b, bwd, medoids_b, medoids_a)
    return pair


def _write_direction(dx, dy, mult, labels, link_map, medoids_here, medoids_there):
    for lab, slc in enumerate(ndi.find_objects(labels), start=1):
        if slc is None:
            continue
        mask = labels[slc] == lab
        targets = link_map.get(lab, [])
        channel = 0 if len(targets) == 0 else (1 if len(targets) == 1 else 2)
        for c in range(3):
            view = mult[c][slc]
            view[mask] = 1.0 if c == channel else 0.0
        if len(targets) == 1:
            hx, hy = medoids_here[lab]
            tx, ty = medoids_there[targets[0]]
            dx[slc][mask] = tx - hx
            dy[slc][mask] = ty - hy


def pair_links(graph: TrackGraph, frame_a: int, frame_b: int) -> list[tuple[int, int]]:
    """Label links for an arbitrary frame pair, composed along the graph.

    For gapped pairs the relation is the composition of the consecutive links
    between the two frames; for a pair of a frame with itself (clamped window
    boundaries) it is the identity.
    """
    rel = graph.relation(frame_a, frame_b)
    return sorted((la, lb) for la, labs in rel.items() for lb in labs)
