"""Evaluation protocol that separates segmentation errors from tracking errors.

Reference and result cells are matched by a relaxed overlap criterion that
allows many-to-many matches, yielding four segmentation error classes (false
positive, false negative, over- and under-segmentation). For each frame pair
the result graph is then transformed (splitting under-segmented and merging
over-segmented nodes, propagating links) so that surviving link differences
measure tracking quality alone. Lineage completeness is counted on the
reference graph's weakly connected components, with a frame tolerance for
divisions and optional exclusion of image-edge cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import NodeKey, TrackGraph


@dataclass
class MatchParams:
    # None: half the mean reference cell area over the video
    absolute_overlap: float | None = None
    mitosis_frame_tolerance: int = 1
    edge_exclusion: bool = True


@dataclass(frozen=True)
class ErrorEvent:
    kind: str  # fp_cell | fn_cell | over | under | fp_link | fn_link
    frame: int  # for links, the earlier frame of the pair
    ref_cells: tuple[NodeKey, ...]
    res_cells: tuple[NodeKey, ...]


@dataclass
class MetricsReport:
    false_positive_cells: int = 0
    false_negative_cells: int = 0
    over_segmentations: int = 0
    under_segmentations: int = 0
    false_positive_links: int = 0
    false_negative_links: int = 0
    complete_lineages: int = 0
    total_lineages: int = 0
    total_ref_cells: int = 0
    total_ref_links: int = 0
    frame_breakdown: list = field(default_factory=list)  # (frame, fp, fn, over, under)
    pair_breakdown: list = field(default_factory=list)  # (frame, fp_links, fn_links)
    notes: list = field(default_factory=list)

    @property
    def segmentation_errors(self) -> int:
        return (
            self.false_positive_cells
            + self.false_negative_cells
            + self.over_segmentations
            + self.under_segmentations
        )

    @property
    def tracking_errors(self) -> int:
        return self.false_positive_links + self.false_negative_links

    @property
    def segmentation_error_rate(self) -> float:
        return self.segmentation_errors / self.total_ref_cells if self.total_ref_cells else 0.0

    @property
    def tracking_error_rate(self) -> float:
        return self.tracking_errors / self.total_ref_links if self.total_ref_links else 0.0

    @property
    def incomplete_lineage_rate(self) -> float:
        if not self.total_lineages:
            return 0.0
        return (self.total_lineages - self.complete_lineages) / self.total_lineages

    def to_text(self) -> str:
        lines = [
            f"reference cells:      {self.total_ref_cells}",
            f"reference links:      {self.total_ref_links}",
            f"false positive cells: {self.false_positive_cells}",
            f"false negative cells: {self.false_negative_cells}",
            f"over-segmentations:   {self.over_segmentations}",
            f"under-segmentations:  {self.under_segmentations}",
            f"segmentation errors:  {self.segmentation_errors}"
            f" ({100 * self.segmentation_error_rate:.3f}%)",
            f"false positive links: {self.false_positive_links}",
            f"false negative links: {self.false_negative_links}",
            f"tracking errors:      {self.tracking_errors}"
            f" ({100 * self.tracking_error_rate:.3f}%)",
            f"complete lineages:    {self.complete_lineages} / {self.total_lineages}"
            f" (incomplete: {100 * self.incomplete_lineage_rate:.3f}%)",
        ]
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["section,frame,fp,fn,over,under"]
        for frame, fp, fn, over, under in self.frame_breakdown:
            rows.append(f"cells,{frame},{fp},{fn},{over},{under}")
        for frame, fp, fn in self.pair_breakdown:
            rows.append(f"links,{frame},{fp},{fn},,")
        rows.append(
            f"totals,,{self.false_positive_cells + self.false_positive_links},"
            f"{self.false_negative_cells + self.false_negative_links},"
            f"{self.over_segmentations},{self.under_segmentations}"
        )
        rows.append(f"lineages,,{self.complete_lineages},{self.total_lineages},,")
        return "\n".join(rows) + "\n"


# ------------------------------------------------------------------ matching


def frame_overlaps(ref: np.ndarray, res: np.ndarray):
    """All overlapping (ref_label, res_label) pairs with pixel counts and the
    centroid of each intersection piece, in one pass."""
    both = (ref > 0) & (res > 0)
    if not both.any():
        return {}
    yy, xx = np.nonzero(both)
    k = int(res.max()) + 1
    codes = ref[yy, xx].astype(np.int64) * k + res[yy, xx]
    uniq, inverse = np.unique(codes, return_inverse=True)
    counts = np.bincount(inverse)
    sum_x = np.bincount(inverse, weights=xx)
    sum_y = np.bincount(inverse, weights=yy)
    out = {}
    for i, code in enumerate(uniq.tolist()):
        r, s = divmod(code, k)
        out[(int(r), int(s))] = (
            int(counts[i]),
            (sum_x[i] / counts[i], sum_y[i] / counts[i]),
        )
    return out


def match_cells(
    ref: np.ndarray,
    res: np.ndarray,
    params: MatchParams | None = None,
    absolute_overlap: float | None = None,
):
    """Overlap relation: (R, S) match iff |R n S| > 0.5 min(|R|,|S|) or > C.

    Many-to-many matches are allowed (that is what makes over- and
    under-segmentation countable).
    """
    if params is None:
        params = MatchParams()
    overlaps = frame_overlaps(ref, res)
    ref_areas = np.bincount(ref.ravel())
    res_areas = np.bincount(res.ravel())
    c = absolute_overlap
    if c is None:
        c = params.absolute_overlap
    if c is None:
        ref_labels = np.nonzero(ref_areas[1:])[0]
        c = 0.5 * ref_areas[1:][ref_labels].mean() if ref_labels.size else 0.0
    relation = set()
    for (r, s), (inter, _) in overlaps.items():
        if inter > 0.5 * min(ref_areas[r], res_areas[s]) or inter > c:
            relation.add((r, s))
    return relation


def count_segmentation_errors(relation, ref_labels_list, res_labels_list, frame):
    """Per-frame segmentation error events from the match relation.

    FP: result cells with no match. FN: reference cells with no match.
    over: N result cells on one reference cell count N-1. under: mirrored.
    """
    events = []
    ref_deg = {}
    res_deg = {}
    for r, s in relation:
        ref_deg.setdefault(r, []).append(s)
        res_deg.setdefault(s, []).append(r)
    for s in res_labels_list:
        if s not in res_deg:
            events.append(ErrorEvent("fp_cell", frame, (), ((frame, s),)))
    for r in ref_labels_list:
        if r not in ref_deg:
            events.append(ErrorEvent("fn_cell", frame, ((frame, r),), ()))
    for r, matches in sorted(ref_deg.items()):
        for _ in range(len(matches) - 1):
            events.append(
                ErrorEvent(
                    "over",
                    frame,
                    ((frame, r),),
                    tuple(sorted((frame, s) for s in matches)),
                )
            )
    for s, matches in sorted(res_deg.items()):
        for _ in range(len(matches) - 1):
            events.append(
                ErrorEvent(
                    "under",
                    frame,
                    tuple(sorted((frame, r) for r in matches)),
                    ((frame, s),),
                )
            )
    return events


# ------------------------------------------------------------- transformation


def _pieces_of(frame, s, res_deg, overlaps):
    """Transformed-node ids for one result cell: one piece per matched
    reference cell, or a single false-positive node."""
    refs = res_deg.get(s)
    if not refs:
        return [("fp", frame, s)]
    return [("ref", frame, r) for r in sorted(refs)]


def _piece_center(frame, node, s, overlaps):
    if node[0] == "fp":
        return None
    r = node[2]
    return overlaps[(r, s)][1]


def transform_result_graph(
    res_edges,
    relation_t,
    relation_t1,
    overlaps_t,
    overlaps_t1,
    frame,
):
    """Transform the result nodes of one frame pair to match reference nodes.

    Implements the four operations (split under-segmented at t+1, split at t,
    merge over-segmented at t, merge at t+1) with link propagation. Where a
    split implies linking M > 1 to N > 1 nodes, links are assigned by minimum
    center distance. Returns the set of transformed edges with a flag telling
    whether the edge exists only because of split propagation.
    """
    res_deg_t = {}
    for r, s in relation_t:
        res_deg_t.setdefault(s, []).append(r)
    res_deg_t1 = {}
    for r, s in relation_t1:
        res_deg_t1.setdefault(s, []).append(r)

    edges: dict[tuple, bool] = {}  # (node_t, node_t1) -> all_from_split
    for s, s1 in sorted(res_edges):
        sources = _pieces_of(frame, s, res_deg_t, overlaps_t)
        targets = _pieces_of(frame + 1, s1, res_deg_t1, overlaps_t1)
        split_made = len(sources) > 1 or len(targets) > 1
        if len(sources) > 1 and len(targets) > 1:
            cost = np.zeros((len(sources), len(targets)))
            for i, a in enumerate(sources):
                ca = _piece_center(frame, a, s, overlaps_t)
                for j, b in enumerate(targets):
                    cb = _piece_center(frame + 1, b, s1, overlaps_t1)
                    cost[i, j] = np.hypot(ca[0] - cb[0], ca[1] - cb[1])
            rows, cols = linear_sum_assignment(cost)
            chosen = [(sources[i], targets[j]) for i, j in zip(rows, cols)]
        else:
            chosen = [(a, b) for a in sources for b in targets]
        for a, b in chosen:
            key = (a, b)
            edges[key] = edges.get(key, True) and split_made
    return edges


def count_link_errors(ref_edges, transformed, relation_t, relation_t1, frame):
    """False positive and false negative link events for one frame pair.

    FP: transformed edges absent from the reference, unless every constituent
    was fabricated by a split. FN: reference edges absent from the transformed
    graph, ignoring edges that involve false-negative objects (the
    merged-but-unlinked correction is handled separately).
    """
    events = []
    ref_edge_set = {(a[1], b[1]) for a, b in ref_edges}
    matched_refs_t = {r for r, _ in relation_t}
    matched_refs_t1 = {r for r, _ in relation_t1}

    transformed_ref_edges = set()
    for (a, b), from_split in sorted(transformed.items()):
        both_ref = a[0] == "ref" and b[0] == "ref"
        if both_ref:
            transformed_ref_edges.add((a[2], b[2]))
            if (a[2], b[2]) in ref_edge_set:
                continue
        if from_split:
            continue
        ref_cells = tuple(
            (f, n[2]) for f, n in ((frame, a), (frame + 1, b)) if n[0] == "ref"
        )
        res_cells = tuple((f, n[2]) for f, n in ((frame, a), (frame + 1, b)) if n[0] == "fp")
        events.append(ErrorEvent("fp_link", frame, ref_cells, res_cells))

    for ra, rb in sorted(ref_edge_set):
        if ra not in matched_refs_t or rb not in matched_refs_t1:
            continue  # false negative objects are not charged as link errors
        if (ra, rb) not in transformed_ref_edges:
            events.append(
                ErrorEvent("fn_link", frame, ((frame, ra), (frame + 1, rb)), ())
            )
    return events


def extra_merge_fn_links(
    res_graph: TrackGraph,
    ref_graph: TrackGraph,
    relation_t,
    relation_t1,
    transformed,
    frame,
):
    """The paper's correction for links hidden by merge propagation.

    A result cell merged into an over-segmented group that itself has no link
    toward the other frame, while its reference cell is linked (and the link
    survived through the sibling), yields one extra false negative link.
    """
    events = []
    transformed_ref_edges = {
        (a[2], b[2]) for (a, b) in transformed if a[0] == "ref" and b[0] == "ref"
    }
    ref_deg_t1 = {}
    for r, s in relation_t1:
        ref_deg_t1.setdefault(r, []).append(s)
    for r, group in sorted(ref_deg_t1.items()):
        if len(group) < 2:
            continue
        ref_preds = ref_graph.predecessors((frame + 1, r))
        if not ref_preds:
            continue
        hidden = any((p[1], r) in transformed_ref_edges for p in ref_preds)
        if not hidden:
            continue
        for s in sorted(group):
            if not res_graph.predecessors((frame + 1, s)):
                events.append(
                    ErrorEvent("fn_link", frame, ((frame + 1, r),), ((frame + 1, s),))
                )
    ref_deg_t = {}
    for r, s in relation_t:
        ref_deg_t.setdefault(r, []).append(s)
    for r, group in sorted(ref_deg_t.items()):
        if len(group) < 2:
            continue
        ref_succs = ref_graph.successors((frame, r))
        if not ref_succs:
            continue
        hidden = any((r, q[1]) in transformed_ref_edges for q in ref_succs)
        if not hidden:
            continue
        for s in sorted(group):
            if not res_graph.successors((frame, s)):
                events.append(
                    ErrorEvent("fn_link", frame, ((frame, r),), ((frame, s),))
                )
    return events


# ------------------------------------------------------------------ lineages


def apply_edge_exclusion(events, ref_graph: TrackGraph, res_graph: TrackGraph):
    """Drop error events involving any edge-touching reference or result cell."""
    kept = []
    for event in events:
        touches = any(
            ref_graph.nodes[key].touches_edge for key in event.ref_cells if key in ref_graph.nodes
        ) or any(
            res_graph.nodes[key].touches_edge for key in event.res_cells if key in res_graph.nodes
        )
        if not touches:
            kept.append(event)
    return kept


def _division_events(graph: TrackGraph):
    """(mother key, daughter frame) per node with out-degree >= 2."""
    return [
        (key, key[0] + 1)
        for key in sorted(graph.nodes)
        if len(graph.successors(key)) >= 2
    ]


def count_complete_lineages(
    ref_graph: TrackGraph,
    res_graph: TrackGraph,
    events,
    relations,
    params: MatchParams,
):
    """Count reference lineages untouched by any (unforgiven) error.

    A lineage is a weakly connected component of the reference graph. A
    result division within the frame tolerance of a reference division in the
    same lineage forgives the errors it causes in between. With edge
    exclusion, lineages containing any edge-touching reference cell are
    removed from both counts.
    """
    components = ref_graph.lineage_components()
    comp_of: dict[NodeKey, int] = {}
    for i, comp in enumerate(components):
        for key in comp:
            comp_of[key] = i

    # map result divisions onto reference lineages through the match relation
    res_to_ref = {}
    for frame, relation in relations.items():
        for r, s in relation:
            res_to_ref.setdefault((frame, s), []).append((frame, r))
    ref_divs = _division_events(ref_graph)
    res_divs = []
    for key, frame in _division_events(res_graph):
        refs = res_to_ref.get(key)
        if refs:
            res_divs.append((comp_of.get(min(refs)), frame))

    tol = params.mitosis_frame_tolerance
    forgiven_windows = []  # (component, frame range)
    used = set()
    for mother, ref_frame in ref_divs:
        comp = comp_of[mother]
        best = None
        for i, (res_comp, res_frame) in enumerate(res_divs):
            if i in used or res_comp != comp:
                continue
            delta = abs(res_frame - ref_frame)
            if delta <= tol and (best is None or delta < best[0]):
                best = (delta, i, res_frame)
        if best is not None:
            used.add(best[1])
            lo = min(ref_frame, best[2]) - 1
            hi = max(ref_frame, best[2])
            forgiven_windows.append((comp, lo, hi))

    incomplete = set()
    for event in events:
        touched = {comp_of[key] for key in event.ref_cells if key in comp_of}
        for comp in touched:
            forgiven = any(
                comp == fc and lo <= event.frame <= hi for fc, lo, hi in forgiven_windows
            )
            if not forgiven:
                incomplete.add(comp)

    total = 0
    complete = 0
    for i, comp in enumerate(components):
        if params.edge_exclusion and any(ref_graph.nodes[k].touches_edge for k in comp):
            continue
        total += 1
        if i not in incomplete:
            complete += 1
    return complete, total


# ------------------------------------------------------------------ overall


def evaluate_video(
    ref_frames,
    ref_graph: TrackGraph,
    res_frames,
    res_graph: TrackGraph,
    params: MatchParams | None = None,
) -> MetricsReport:
    """Full evaluation of a result video against its reference."""
    if params is None:
        params = MatchParams()
    if len(ref_frames) != len(res_frames):
        raise ValueError("reference and result videos differ in length")
    for ref, res in zip(ref_frames, res_frames):
        if ref.shape != res.shape:
            raise ValueError("reference and result rasters differ in size")
    n_frames = len(ref_frames)

    c = params.absolute_overlap
    if c is None:
        areas = [ref_graph.nodes[k].area for k in ref_graph.nodes]
        c = 0.5 * float(np.mean(areas)) if areas else 0.0

    relations = {}
    overlaps = {}
    events = []
    frame_breakdown = []
    for f in range(n_frames):
        overlaps[f] = frame_overlaps(ref_frames[f], res_frames[f])
        relations[f] = match_cells(ref_frames[f], res_frames[f], params, absolute_overlap=c)
        ref_labels = [k[1] for k in ref_graph.nodes_at(f)]
        res_labels = [k[1] for k in res_graph.nodes_at(f)]
        frame_events = count_segmentation_errors(relations[f], ref_labels, res_labels, f)
        events.extend(frame_events)

    pair_events = []
    for f in range(n_frames - 1):
        res_edges = [(a[1], b[1]) for a, b in res_graph.edges_between(f, f + 1)]
        transformed = transform_result_graph(
            res_edges, relations[f], relations[f + 1], overlaps[f], overlaps[f + 1], f
        )
        ref_edges = ref_graph.edges_between(f, f + 1)
        link_events = count_link_errors(
            ref_edges, transformed, relations[f], relations[f + 1], f
        )
        link_events.extend(
            extra_merge_fn_links(
                res_graph, ref_graph, relations[f], relations[f + 1], transformed, f
            )
        )
        pair_events.append((f, link_events))
        events.extend(link_events)

    if params.edge_exclusion:
        events = apply_edge_exclusion(events, ref_graph, res_graph)
    kept = set(map(id, events))

    report = MetricsReport()
    for f in range(n_frames):
        fp = sum(1 for e in events if e.kind == "fp_cell" and e.frame == f)
        fn = sum(1 for e in events if e.kind == "fn_cell" and e.frame == f)
        over = sum(1 for e in events if e.kind == "over" and e.frame == f)
        under = sum(1 for e in events if e.kind == "under" and e.frame == f)
        report.frame_breakdown.append((f, fp, fn, over, under))
        report.false_positive_cells += fp
        report.false_negative_cells += fn
        report.over_segmentations += over
        report.under_segmentations += under
    for f, link_events in pair_events:
        link_events = [e for e in link_events if id(e) in kept]
        fp = sum(1 for e in link_events if e.kind == "fp_link")
        fn = sum(1 for e in link_events if e.kind == "fn_link")
        report.pair_breakdown.append((f, fp, fn))
        report.false_positive_links += fp
        report.false_negative_links += fn

    complete, total = count_complete_lineages(
        ref_graph, res_graph, events, relations, params
    )
    report.complete_lineages = complete
    report.total_lineages = total

    if params.edge_exclusion:
        interior = [k for k in ref_graph.nodes if not ref_graph.nodes[k].touches_edge]
        report.total_ref_cells = len(interior)
        report.total_ref_links = sum(
            1
            for a, b in ref_graph.edges()
            if not ref_graph.nodes[a].touches_edge and not ref_graph.nodes[b].touches_edge
        )
        report.notes.append(
            "edge exclusion: errors touching image-edge cells are ignored and"
            " excluded from the denominators"
        )
    else:
        report.total_ref_cells = len(ref_graph.nodes)
        report.total_ref_links = ref_graph.n_edges()
    return report
