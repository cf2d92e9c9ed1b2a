"""Displacement-based linking of cell instances across consecutive frames.

Each cell reads its per-axis displacement as the median of the predicted
displacement maps over its own pixels and its link-multiplicity category as
the channel with the highest median probability. A forward pass links cells
predicted to have a single next cell; a backward pass then links still
unlinked cells predicted to have a single previous cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import MANY, ONE, ZERO, NodeKey, TrackGraph
from .grid import CellRegion, region_properties
from .proxies import ProxyPair

# tie-break priority for equal medians: one > zero > many
_CHANNEL_PRIORITY = (1, 0, 2)
_CHANNEL_NAMES = {0: ZERO, 1: ONE, 2: MANY}


def assign_multiplicity(regions: list[CellRegion], mult_map: np.ndarray) -> dict[int, str]:
    """Per-cell link multiplicity: channel with the highest median probability.

    ``mult_map`` has shape (3, h, w) with channels P(=0), P(=1), P(>1). Ties
    resolve in the order one > zero > many.
    """
    out = {}
    for region in regions:
        medians = [float(np.median(mult_map[c][region.ys, region.xs])) for c in range(3)]
        best = max(_CHANNEL_PRIORITY, key=lambda c: (medians[c], -_CHANNEL_PRIORITY.index(c)))
        out[region.label] = _CHANNEL_NAMES[best]
    return out


def _round_half_away(value: float) -> int:
    return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


def median_shift(region: CellRegion, dx: np.ndarray, dy: np.ndarray) -> tuple[float, float]:
    return (
        float(np.median(dx[region.ys, region.xs])),
        float(np.median(dy[region.ys, region.xs])),
    )


def _shifted_target(region: CellRegion, dx, dy, target_labels) -> int:
    sx, sy = median_shift(region, dx, dy)
    tx = region.medoid[0] + _round_half_away(sx)
    ty = region.medoid[1] + _round_half_away(sy)
    h, w = target_labels.shape
    if not (0 <= ty < h and 0 <= tx < w):
        return 0  # shifted out of bounds: treated as background
    return int(target_labels[ty, tx])


def forward_track(
    regions_t: list[CellRegion],
    labels_t1: np.ndarray,
    fwd_dx: np.ndarray,
    fwd_dy: np.ndarray,
    fwd_cat: dict[int, str],
) -> list[tuple[int, int]]:
    """Links (label_t, label_t1) for cells with forward category one whose
    shifted medoid lands inside a cell of the next frame."""
    links = []
    for region in regions_t:
        if fwd_cat.get(region.label) != ONE:
            continue
        target = _shifted_target(region, fwd_dx, fwd_dy, labels_t1)
        if target != 0:
            links.append((region.label, target))
    return links


def backward_track(
    regions_t1: list[CellRegion],
    labels_t: np.ndarray,
    bwd_dx: np.ndarray,
    bwd_dy: np.ndarray,
    bwd_cat: dict[int, str],
    already_linked: set[int],
) -> list[tuple[int, int]]:
    """Backward pass over frame t+1 cells without an incoming link."""
    links = []
    for region in regions_t1:
        if region.label in already_linked or bwd_cat.get(region.label) != ONE:
            continue
        source = _shifted_target(region, bwd_dx, bwd_dy, labels_t)
        if source != 0:
            links.append((source, region.label))
    return links


def link_pair(
    graph: TrackGraph,
    frame_t: int,
    regions_t: list[CellRegion],
    regions_t1: list[CellRegion],
    labels_t: np.ndarray,
    labels_t1: np.ndarray,
    pair: ProxyPair,
) -> None:
    """Run forward then backward tracking for one consecutive frame pair and
    record the edges and multiplicity categories on the graph."""
    fwd_cat = assign_multiplicity(regions_t, pair.fwd_mult)
    bwd_cat = assign_multiplicity(regions_t1, pair.bwd_mult)
    for label, cat in fwd_cat.items():
        graph.fwd_mult[(frame_t, label)] = cat
    for label, cat in bwd_cat.items():
        graph.bwd_mult[(frame_t + 1, label)] = cat

    links = forward_track(regions_t, labels_t1, pair.fwd_dx, pair.fwd_dy, fwd_cat)
    linked_targets = {lb for _, lb in links}
    links += backward_track(
        regions_t1, labels_t, pair.bwd_dx, pair.bwd_dy, bwd_cat, linked_targets
    )
    for la, lb in sorted(links):
        graph.add_edge((frame_t, la), (frame_t + 1, lb))


def classify_edges(graph: TrackGraph) -> dict[tuple[NodeKey, NodeKey], str]:
    """Edge kinds: merge for shared targets, split for shared sources,
    conflict when both, normal otherwise."""
    return {(a, b): graph.edge_kind(a, b) for a, b in graph.edges()}


def track_video(
    label_frames: list[np.ndarray],
    pairs: list[ProxyPair],
    regions_per_frame: list[list[CellRegion]] | None = None,
) -> TrackGraph:
    """Build the track graph of a video from its consecutive-pair proxies.

    ``pairs[t]`` must be the proxies for frames (t, t+1); mid-range window
    pairs are training targets and are not consumed here.
    """
    if regions_per_frame is None:
        regions_per_frame = [
            region_properties(labels, frame_index=f) for f, labels in enumerate(label_frames)
        ]
    graph = TrackGraph()
    for regions in regions_per_frame:
        graph.add_frame(regions)
    for t, pair in enumerate(pairs):
        link_pair(
            graph,
            t,
            regions_per_frame[t],
            regions_per_frame[t + 1],
            label_frames[t],
            label_frames[t + 1],
            pair,
        )
    return graph


# --------------------------------------------------------------- tracks


@dataclass
class Track:
    """Maximal chain of 1-1 links; splits, merges and appearances break it."""

    track_id: int
    nodes: list[NodeKey]
    parent_track_id: int | None = None
    lineage_id: int = 0

    @property
    def start(self) -> NodeKey:
        return self.nodes[0]

    @property
    def end(self) -> NodeKey:
        return self.nodes[-1]


def extract_tracks(graph: TrackGraph) -> list[Track]:
    """Split the graph into tracks, numbered by (start frame, start label)."""
    starts = []
    for key in sorted(graph.nodes):
        preds = graph.predecessors(key)
        if len(preds) != 1 or len(graph.successors(preds[0])) != 1:
            starts.append(key)
    tracks = []
    for track_id, start in enumerate(sorted(starts), start=1):
        nodes = [start]
        while True:
            succs = graph.successors(nodes[-1])
            if len(succs) != 1 or len(graph.predecessors(succs[0])) != 1:
                break
            nodes.append(succs[0])
        tracks.append(Track(track_id=track_id, nodes=nodes))

    by_start: dict[NodeKey, Track] = {t.start: t for t in tracks}
    by_node: dict[NodeKey, Track] = {n: t for t in tracks for n in t.nodes}
    for track in tracks:
        preds = graph.predecessors(track.start)
        if preds:
            track.parent_track_id = min(by_node[p].track_id for p in preds)

    # lineage = weakly connected component, numbered by smallest member node
    for lineage_id, comp in enumerate(graph.lineage_components(), start=1):
        for key in comp:
            node_track = by_node.get(key)
            if node_track is not None:
                node_track.lineage_id = lineage_id
    # isolated single-node tracks without edges still get their component id
    return tracks
