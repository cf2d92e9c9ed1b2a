"""Whole-video correction of over/under-segmentation.

Merge and split links that contradict the predicted link multiplicity are
suspected segmentation errors. Each suspect star is resolved from long-range
temporal evidence: if the involved cells were in contact at every frame of
their common past (merge star) or future (split star), the fragments are
merged along that contiguous stretch; otherwise the opposite-side object (and
its track while it stays a single object) is re-split by a watershed on the
stored EDM and the fragments are relinked with the tracking procedure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .graph import MANY, ONE, NodeKey, TrackGraph
from .grid import (
    FOUR_CONN,
    contour_distance,
    region_of,
    regional_maxima,
    relabel_components,
    watershed,
)
from .proxies import ProxyFrame, ProxyPair
from .tracking import assign_multiplicity, median_shift, _round_half_away


@dataclass
class CorrectionParams:
    contact_distance: float = 2.0  # px between contours to count as "in contact"
    rod_mode: bool = False
    alignment_angle_max: float = 0.35  # radians, rod_mode only
    edm_threshold: float = 0.5


@dataclass(frozen=True)
class Star:
    kind: str  # 'merge' | 'split'
    frame: int  # frame of the earlier link side
    sources: tuple[NodeKey, ...]
    targets: tuple[NodeKey, ...]


@dataclass
class EditRecord:
    frame: int
    action: str  # 'merge' | 'split' | 'skip'
    labels: tuple[int, ...]
    reason: str

    def format(self) -> str:
        labs = ",".join(str(lab) for lab in self.labels)
        return f"frame {self.frame}: {self.action} [{labs}] ({self.reason})"


@dataclass
class CorrectionResult:
    frames: list[np.ndarray]
    graph: TrackGraph
    records: list[EditRecord]

    def report_text(self) -> str:
        lines = [f"{len([r for r in self.records if r.action != 'skip'])} edits applied"]
        lines += [r.format() for r in self.records]
        return "\n".join(lines) + "\n"


def find_suspect_links(graph: TrackGraph) -> list[Star]:
    """Merge/split stars whose multiplicity predictions contradict the links.

    A merge star is consistent (a real fusion, left untouched) only when every
    source expects one next cell and the target expects many previous cells; a
    split star mirrors this for division. Everything else is suspect.
    """
    stars = []
    by_target: dict[NodeKey, list[NodeKey]] = {}
    by_source: dict[NodeKey, list[NodeKey]] = {}
    for a, b in graph.edges():
        by_target.setdefault(b, []).append(a)
        by_source.setdefault(a, []).append(b)
    for target, sources in by_target.items():
        if len(sources) < 2:
            continue
        consistent = all(graph.fwd_mult.get(s) == ONE for s in sources) and (
            graph.bwd_mult.get(target) == MANY
        )
        if not consistent:
            stars.append(
                Star("merge", target[0] - 1, tuple(sorted(sources)), (target,))
            )
    for source, targets in by_source.items():
        if len(targets) < 2:
            continue
        consistent = graph.fwd_mult.get(source) == MANY and all(
            graph.bwd_mult.get(t) == ONE for t in targets
        )
        if not consistent:
            stars.append(
                Star("split", source[0], (source,), tuple(sorted(targets)))
            )
    stars.sort(key=lambda s: (s.frame, 0 if s.kind == "merge" else 1, s.sources, s.targets))
    return stars


def _axial_diff(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def _in_contact(ra, rb, params: CorrectionParams) -> bool:
    if ra.key == rb.key:
        return True
    if contour_distance(ra, rb) > params.contact_distance:
        return False
    if params.rod_mode:
        if _axial_diff(ra.major_axis_angle, rb.major_axis_angle) > params.alignment_angle_max:
            return False
        dx = rb.centroid[0] - ra.centroid[0]
        dy = rb.centroid[1] - ra.centroid[1]
        if dx * dx + dy * dy > 1e-12:
            link_angle = math.atan2(dy, dx) % math.pi
            mean_axis = 0.5 * math.atan2(
                math.sin(2 * ra.major_axis_angle) + math.sin(2 * rb.major_axis_angle),
                math.cos(2 * ra.major_axis_angle) + math.cos(2 * rb.major_axis_angle),
            ) % math.pi
            if _axial_diff(link_angle, mean_axis) > params.alignment_angle_max:
                return False
    return True


class _VideoState:
    """Mutable labels + graph during correction; labels stay unique per frame."""

    def __init__(self, frames, graph, frames_px, pairs_px, params):
        self.frames = [f.copy() for f in frames]
        self.graph = graph.copy()
        self.frames_px = frames_px
        self.pairs_px = pairs_px
        self.params = params
        self.next_label = [int(f.max()) + 1 for f in self.frames]
        self.records: list[EditRecord] = []

    # -------------------------------------------------------- helpers

    def region(self, key: NodeKey):
        return self.graph.nodes[key]

    def _reassign_mult(self, key: NodeKey) -> None:
        frame = key[0]
        region = self.region(key)
        if frame < len(self.pairs_px):
            cat = assign_multiplicity([region], self.pairs_px[frame].fwd_mult)
            self.graph.fwd_mult[key] = cat[region.label]
        if frame >= 1:
            cat = assign_multiplicity([region], self.pairs_px[frame - 1].bwd_mult)
            self.graph.bwd_mult[key] = cat[region.label]

    def merge_nodes(self, keys: list[NodeKey], reason: str) -> NodeKey | None:
        keys = sorted(set(keys))
        if len(keys) < 2:
            return keys[0] if keys else None
        frame = keys[0][0]
        labels = [k[1] for k in keys]
        raster = self.frames[frame]
        union = np.isin(raster, labels)
        if ndi.label(union, FOUR_CONN)[1] != 1:
            self.records.append(
                EditRecord(frame, "skip", tuple(labels), "merge union is not 4-connected")
            )
            return None
        new_label = min(labels)
        raster[union] = new_label
        preds = sorted({p for k in keys for p in self.graph.predecessors(k)})
        succs = sorted({s for k in keys for s in self.graph.successors(k)})
        for k in keys:
            self.graph.remove_node(k)
        new_key = (frame, new_label)
        self.graph.nodes[new_key] = region_of(raster, new_label, frame)
        for p in preds:
            self.graph.add_edge(p, new_key)
        for s in succs:
            self.graph.add_edge(new_key, s)
        self._reassign_mult(new_key)
        self.records.append(EditRecord(frame, "merge", tuple(labels), reason))
        return new_key

    def can_split(self, key: NodeKey, k: int) -> bool:
        """True if a k-way split of the node can be seeded."""
        frame, label = key
        if self.frames_px[frame] is None:
            return False
        mask = self.frames[frame] == label
        edm = self.frames_px[frame].edm
        if int(regional_maxima(edm, self.params.edm_threshold, mask=mask).max()) >= k:
            return True
        eroded = mask
        while eroded.any():
            eroded = ndi.binary_erosion(eroded, FOUR_CONN)
            if ndi.label(eroded, FOUR_CONN)[1] >= k:
                return True
        return False

    def split_node(self, key: NodeKey, k: int, reason: str) -> list[NodeKey] | None:
        """Split one object by a watershed on the stored EDM.

        Floods from every regional maximum inside the object (the relink step
        afterwards merges fragments that share a linked object, so producing
        more than k fragments is fine). If the EDM holds fewer than k maxima,
        the object is eroded until it falls into k pieces to seed from.
        Returns the fragment keys, the first keeping the original label, or
        None (with a record) when no EDM is stored or no seeding exists.
        """
        frame, label = key
        if self.frames_px[frame] is None:
            self.records.append(
                EditRecord(frame, "skip", (label,), "no stored EDM for this frame")
            )
            return None
        raster = self.frames[frame]
        mask = raster == label
        edm = self.frames_px[frame].edm
        maxima = regional_maxima(edm, self.params.edm_threshold, mask=mask)
        n_max = int(maxima.max())
        seeds = np.zeros(raster.shape, np.int32)
        if n_max >= k:
            seeds = maxima
        else:
            eroded = mask
            while True:
                eroded = ndi.binary_erosion(eroded, FOUR_CONN)
                comp, n = ndi.label(eroded, FOUR_CONN)
                if n >= k:
                    sizes = ndi.sum(eroded, comp, index=np.arange(1, n + 1))
                    keep = sorted(range(1, n + 1), key=lambda c: (-sizes[c - 1], c))[:k]
                    for rank, c in enumerate(keep, start=1):
                        seeds[comp == c] = rank
                    break
                if not eroded.any():
                    self.records.append(
                        EditRecord(frame, "skip", (label,), f"cannot seed {k}-way split")
                    )
                    return None
        frag = watershed(edm, seeds, self.params.edm_threshold, mask=mask)
        orphan = mask & (frag == 0)
        if orphan.any():
            # assign leftover pixels (below-threshold EDM) to the nearest fragment
            empty = np.ones(raster.shape, bool)
            empty[frag > 0] = False
            _, (iy, ix) = ndi.distance_transform_edt(empty, return_indices=True)
            frag[orphan] = frag[iy[orphan], ix[orphan]]

        n_frag = int(frag.max())
        new_labels = [label]
        for _ in range(n_frag - 1):
            new_labels.append(self.next_label[frame])
            self.next_label[frame] += 1
        # stale edges drop with the node; relinking is the caller's job
        self.graph.remove_node(key)
        for rank, new_label in enumerate(new_labels, start=1):
            raster[frag == rank] = new_label
        keys = []
        for new_label in new_labels:
            new_key = (frame, new_label)
            self.graph.nodes[new_key] = region_of(raster, new_label, frame)
            self._reassign_mult(new_key)
            keys.append(new_key)
        self.records.append(EditRecord(frame, "split", tuple(new_labels), reason))
        return keys

    def relink(
        self,
        frame_a: int,
        source_keys: list[NodeKey],
        target_keys: list[NodeKey],
        merge_on: str | None,
        reason: str,
    ) -> tuple[list[NodeKey], list[NodeKey]]:
        """Link the given sources (frame_a) to targets (frame_a + 1) with the
        tracking procedure, then merge excess fragments that share a partner.

        Returns the possibly merged (sources, targets) key lists.
        """
        if not (0 <= frame_a < len(self.pairs_px)):
            return source_keys, target_keys
        pair = self.pairs_px[frame_a]
        source_set = set(source_keys)
        target_set = set(target_keys)
        for s in list(source_keys):
            for t in self.graph.successors(s):
                if t in target_set:
                    self.graph.remove_edge(s, t)
        labels_b = self.frames[frame_a + 1]
        labels_a = self.frames[frame_a]
        for s in sorted(source_set):
            if self.graph.fwd_mult.get(s) != ONE:
                continue
            target = self._vote_target(self.region(s), pair.fwd_dx, pair.fwd_dy, labels_b)
            if target and (frame_a + 1, target) in target_set:
                self.graph.add_edge(s, (frame_a + 1, target))
        for t in sorted(target_set):
            if self.graph.predecessors(t) or self.graph.bwd_mult.get(t) != ONE:
                continue
            source = self._vote_target(self.region(t), pair.bwd_dx, pair.bwd_dy, labels_a)
            if source and (frame_a, source) in source_set:
                self.graph.add_edge((frame_a, source), t)

        if merge_on == "targets":
            groups: dict[NodeKey, list[NodeKey]] = {}
            for t in sorted(target_set):
                preds = [p for p in self.graph.predecessors(t) if p in source_set]
                if len(preds) == 1:
                    groups.setdefault(preds[0], []).append(t)
            for anchor, members in sorted(groups.items()):
                # only collapse fragments while they outnumber the linked objects
                if len(members) >= 2 and len(target_set) > len(source_set):
                    merged = self.merge_nodes(members, reason)
                    if merged is not None:
                        target_set.difference_update(members)
                        target_set.add(merged)
            target_set = self._absorb_orphans(
                target_set, lambda t: bool(self.graph.predecessors(t)), reason
            )
        elif merge_on == "sources":
            groups = {}
            for s in sorted(source_set):
                succs = [t for t in self.graph.successors(s) if t in target_set]
                if len(succs) == 1:
                    groups.setdefault(succs[0], []).append(s)
            for anchor, members in sorted(groups.items()):
                if len(members) >= 2 and len(source_set) > len(target_set):
                    merged = self.merge_nodes(members, reason)
                    if merged is not None:
                        source_set.difference_update(members)
                        source_set.add(merged)
            source_set = self._absorb_orphans(
                source_set, lambda s: bool(self.graph.successors(s)), reason
            )
        return sorted(source_set), sorted(target_set)

    def _absorb_orphans(self, keys: set, is_linked, reason: str) -> set:
        """Merge fragments that found no link into a touching linked sibling."""
        changed = True
        while changed:
            changed = False
            for key in sorted(keys):
                if is_linked(key):
                    continue
                region = self.region(key)
                for other in sorted(keys):
                    if other == key or not is_linked(other):
                        continue
                    if contour_distance(region, self.region(other)) <= 1.5:
                        merged = self.merge_nodes([key, other], reason + " (orphan fragment)")
                        if merged is not None:
                            keys.discard(key)
                            keys.discard(other)
                            keys.add(merged)
                            changed = True
                        break
                if changed:
                    break
        return keys

    def _vote_target(self, region, dx, dy, target_labels) -> int:
        """Majority label under the region shifted by its median displacement.

        More robust than landing the single shifted medoid: corrective
        fragments can carry bridge pixels that displace their medoid.
        """
        sx, sy = median_shift(region, dx, dy)
        xs = region.xs + _round_half_away(sx)
        ys = region.ys + _round_half_away(sy)
        h, w = target_labels.shape
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        if not keep.any():
            return 0
        hits = target_labels[ys[keep], xs[keep]]
        hits = hits[hits > 0]
        if hits.size == 0:
            return 0
        values, counts = np.unique(hits, return_counts=True)
        best = counts.max()
        return int(values[counts == best].min())


def _walk_chain(graph: TrackGraph, key: NodeKey, forward: bool) -> list[NodeKey]:
    """Maximal chain of pure 1-1 links starting at ``key`` (inclusive)."""
    chain = [key]
    while True:
        if forward:
            nxt = graph.successors(chain[-1])
            if len(nxt) != 1 or len(graph.predecessors(nxt[0])) != 1:
                break
        else:
            nxt = graph.predecessors(chain[-1])
            if len(nxt) != 1 or len(graph.successors(nxt[0])) != 1:
                break
        chain.append(nxt[0])
    return chain


def _contact_stretch(
    state: _VideoState, star: Star, params: CorrectionParams, forward: bool
) -> tuple[bool, list[tuple[int, list[NodeKey]]]]:
    """Walk the co-existing lineages away from the link and test contact.

    Returns (all_in_contact, stretch) where stretch lists (frame, nodes) for
    every checked frame while contact held.
    """
    anchors = star.sources if not forward else star.targets
    chains = [_walk_chain(state.graph, a, forward=forward) for a in anchors]
    depth = min(len(c) for c in chains)
    stretch = []
    for i in range(depth):
        nodes = sorted({c[i] for c in chains})
        regions = [state.region(n) for n in nodes]
        ok = all(
            _in_contact(regions[i1], regions[i2], params)
            for i1 in range(len(regions))
            for i2 in range(i1 + 1, len(regions))
        )
        if not ok:
            return False, stretch
        stretch.append((nodes[0][0], nodes))
    return True, stretch


def resolve_merge_star(state: _VideoState, star: Star, params: CorrectionParams) -> None:
    """Fig 2A-i rule: merge the sources over their in-contact past, or split
    the target (and its forward track while it stays one object)."""
    in_contact, stretch = _contact_stretch(state, star, params, forward=False)
    if in_contact:
        for frame, nodes in sorted(stretch):
            state.merge_nodes(nodes, "merge link: cells in contact through common past")
        return
    k = len(star.sources)
    target = star.targets[0]
    chain = _walk_chain(state.graph, target, forward=True)
    if not all(state.can_split(node, k) for node in chain):
        state.records.append(
            EditRecord(star.frame, "skip", tuple(n[1] for n in chain), "chain cannot be split")
        )
        return
    exits = state.graph.successors(chain[-1])
    prev = list(star.sources)
    for node in chain:
        frags = state.split_node(node, k, "merge link contradicted by separated past")
        if frags is None:
            return
        prev, frags = state.relink(
            node[0] - 1, prev, frags, "targets", "fragments sharing a previous object"
        )
        prev = frags
    if exits:
        state.relink(chain[-1][0], prev, exits, None, "reattach after split")


def resolve_split_star(state: _VideoState, star: Star, params: CorrectionParams) -> None:
    """Mirror rule (Fig 2A-ii): merge the targets over their in-contact
    future, or split the source and its backward track."""
    in_contact, stretch = _contact_stretch(state, star, params, forward=True)
    if in_contact:
        for frame, nodes in sorted(stretch):
            state.merge_nodes(nodes, "split link: cells in contact through common future")
        return
    k = len(star.targets)
    source = star.sources[0]
    chain = _walk_chain(state.graph, source, forward=False)  # latest -> earliest
    if not all(state.can_split(node, k) for node in chain):
        state.records.append(
            EditRecord(star.frame, "skip", tuple(n[1] for n in chain), "chain cannot be split")
        )
        return
    entries = state.graph.predecessors(chain[-1])
    nxt = list(star.targets)
    frag_lists: list[list[NodeKey]] = []
    for node in chain:
        frags = state.split_node(node, k, "split link contradicted by separated future")
        if frags is None:
            return
        frag_lists.append(frags)
    # relink latest to earliest so fragments anchor on the separated targets
    for i, frags in enumerate(frag_lists):
        frame = chain[i][0]
        frags, nxt_new = state.relink(
            frame, frags, nxt, "sources", "fragments sharing a following object"
        )
        nxt = frags
    if entries:
        state.relink(chain[-1][0] - 1, entries, nxt, "targets", "reattach after split")


def _star_is_current(graph: TrackGraph, star: Star) -> bool:
    for key in star.sources + star.targets:
        if key not in graph.nodes:
            return False
    if star.kind == "merge":
        target = star.targets[0]
        return tuple(sorted(graph.predecessors(target))) == star.sources
    source = star.sources[0]
    return tuple(sorted(graph.successors(source))) == star.targets


def apply_corrections(
    label_frames: list[np.ndarray],
    graph: TrackGraph,
    frames_px: list[ProxyFrame],
    pairs_px: list[ProxyPair],
    params: CorrectionParams | None = None,
) -> CorrectionResult:
    """Find suspect stars and resolve them in ascending frame order.

    Stars invalidated by earlier edits are dropped (and recorded). Labels are
    renumbered per frame at the end, with the graph remapped to match, so the
    output satisfies the usual consecutive-label invariant.
    """
    if params is None:
        params = CorrectionParams()
    state = _VideoState(label_frames, graph, frames_px, pairs_px, params)
    for star in find_suspect_links(graph):
        if not _star_is_current(state.graph, star):
            state.records.append(
                EditRecord(star.frame, "skip", (), f"{star.kind} star dissolved by earlier edit")
            )
            continue
        if star not in find_suspect_links(state.graph):
            state.records.append(
                EditRecord(star.frame, "skip", (), f"{star.kind} star no longer suspect")
            )
            continue
        if star.kind == "merge":
            resolve_merge_star(state, star, params)
        else:
            resolve_split_star(state, star, params)

    # canonicalize labels and remap the graph
    out_frames = []
    remap: dict[NodeKey, NodeKey] = {}
    for f, raster in enumerate(state.frames):
        relabeled = relabel_components(raster)
        out_frames.append(relabeled)
        for key in state.graph.nodes_at(f):
            region = state.graph.nodes[key]
            new_label = int(relabeled[region.ys[0], region.xs[0]])
            remap[key] = (f, new_label)
    final = TrackGraph()
    for key, region in sorted(state.graph.nodes.items()):
        f, new_label = remap[key]
        final.nodes[(f, new_label)] = region_of(out_frames[f], new_label, f)
    for a, b in state.graph.edges():
        final.add_edge(remap[a], remap[b])
    for key, cat in state.graph.fwd_mult.items():
        if key in remap:
            final.fwd_mult[remap[key]] = cat
    for key, cat in state.graph.bwd_mult.items():
        if key in remap:
            final.bwd_mult[remap[key]] = cat
    return CorrectionResult(frames=out_frames, graph=final, records=state.records)
