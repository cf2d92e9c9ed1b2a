"""Synthetic ground-truth videos and a DNN stand-in.

``simulate`` renders moving, dividing rod (capsule) or blob (deformed disk)
cells as a labeled video with its reference track graph. ``corrupt_proxies``
turns clean proxy maps into "predictions" with controllable defects: additive
noise, transient over/under-segmentation (injected by recomputing the EDM and
GDCM of a split or bridged belief object, so only the segmenting proxies lie),
displacement jitter, and multiplicity flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.ndimage as ndi

from ._kernels import SQRT2, geodesic_steps
from .graph import TrackGraph
from .grid import medoid_of, region_properties, relabel_components
from .proxies import ProxyFrame, ProxyPair, cell_medoids, make_proxy_frame, make_proxy_pair, pair_links


@dataclass
class SimConfig:
    width: int = 256
    height: int = 256
    cell_count: int = 20
    shape: str = "rod"  # 'rod' | 'blob'
    rod_length: tuple[float, float] = (9.0, 15.0)  # total length incl. caps
    rod_radius: tuple[float, float] = (2.0, 2.6)
    blob_radius: tuple[float, float] = (3.5, 5.5)
    speed: tuple[float, float] = (0.3, 1.2)
    direction_persistence: float = 0.85  # 1 = straight lines
    division_prob: float = 0.0  # per cell per frame
    growth_rate: float = 0.0  # px/frame of rod length regrowth
    divide_min_length: float = 10.0
    frame_count: int = 50
    seed: int = 0
    boundary: str = "reflect"  # 'reflect' | 'open'
    # clearance is kept above the default correction contact distance (2.0)
    # so distinct cells are never mistaken for fragments of one object
    min_gap: float = 2.5
    max_place_tries: int = 500


@dataclass
class CorruptionConfig:
    proxy_noise_sigma: float = 0.0
    under_seg_rate: float = 0.0  # per eligible touching pair per frame
    over_seg_rate: float = 0.0  # per eligible cell per frame
    displacement_jitter_sigma: float = 0.0  # gaussian, px, per cell
    displacement_jitter_rel: float = 0.0  # uniform, fraction of the true shift
    multiplicity_flip_rate: float = 0.0  # per cell per direction
    bridge_max_gap: float = 3.5  # max contour gap bridged by an under-seg event
    seed: int = 0


@dataclass
class _Cell:
    cell_id: int
    x: float
    y: float
    phi: float
    speed: float
    length: float
    radius: float
    wobble: tuple[float, int, float] = (0.0, 0, 0.0)  # amplitude, lobes, phase


@dataclass
class SimulationResult:
    config: SimConfig
    frames: list[np.ndarray]
    graph: TrackGraph
    frame_cell_labels: list[dict[int, int]]  # per frame: cell_id -> label


# ------------------------------------------------------------------ rendering


def _cell_extent(cell: _Cell) -> float:
    if cell.length > 2 * cell.radius:
        return cell.length / 2.0 + 1.0
    return cell.radius * (1.0 + cell.wobble[0]) + 1.0


def _render_mask(cell: _Cell, shape):
    """Pixel mask of one cell, clipped to the image; returns (slice, mask)."""
    h, w = shape
    ext = _cell_extent(cell)
    y0 = max(int(math.floor(cell.y - ext)), 0)
    y1 = min(int(math.ceil(cell.y + ext)) + 1, h)
    x0 = max(int(math.floor(cell.x - ext)), 0)
    x1 = min(int(math.ceil(cell.x + ext)) + 1, w)
    if y0 >= y1 or x0 >= x1:
        return None, None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx = xx - cell.x
    dy = yy - cell.y
    if cell.length > 2 * cell.radius:
        half = (cell.length - 2 * cell.radius) / 2.0
        ca, sa = math.cos(cell.phi), math.sin(cell.phi)
        t = np.clip(dx * ca + dy * sa, -half, half)
        mask = (dx - t * ca) ** 2 + (dy - t * sa) ** 2 <= cell.radius**2
    else:
        amp, lobes, phase = cell.wobble
        r = cell.radius
        if amp > 0:
            ang = np.arctan2(dy, dx)
            r = cell.radius * (1.0 + amp * np.cos(lobes * ang + phase))
        mask = dx * dx + dy * dy <= r * r
    if not mask.any():
        return None, None
    return (slice(y0, y1), slice(x0, x1)), mask


def _disk_struct(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy * yy + xx * xx <= radius * radius


class _Arena:
    """Occupancy raster keyed by cell id, with a clearance test."""

    def __init__(self, shape, min_gap):
        self.occ = np.zeros(shape, np.int32)
        self.struct = _disk_struct(min_gap)

    def erase(self, cell_id, slc, mask):
        if slc is not None:
            view = self.occ[slc]
            view[mask & (view == cell_id)] = 0

    def fits(self, slc, mask, ignore=0):
        if slc is None:
            return False
        grown = ndi.binary_dilation(mask, self.struct)
        view = self.occ[slc]
        clash = grown & (view != 0)
        if ignore:
            clash &= view != ignore
        return not clash.any()

    def paint(self, cell_id, slc, mask):
        self.occ[slc][mask] = cell_id


# ------------------------------------------------------------------ dynamics


def _spawn_cell(rng, config, cell_id):
    if config.shape == "rod":
        length = rng.uniform(*config.rod_length)
        radius = rng.uniform(*config.rod_radius)
        wobble = (0.0, 0, 0.0)
    else:
        length = 0.0
        radius = rng.uniform(*config.blob_radius)
        wobble = (rng.uniform(0.04, 0.15), int(rng.integers(2, 4)), rng.uniform(0, 2 * math.pi))
    return _Cell(
        cell_id=cell_id,
        x=0.0,
        y=0.0,
        phi=rng.uniform(-math.pi, math.pi),
        speed=rng.uniform(*config.speed),
        length=length,
        radius=radius,
        wobble=wobble,
    )


def _reflect(cell, config):
    ext = _cell_extent(cell) + 1.0
    if cell.x < ext:
        cell.x = ext + (ext - cell.x)
        cell.phi = math.pi - cell.phi
    elif cell.x > config.width - 1 - ext:
        hi = config.width - 1 - ext
        cell.x = hi - (cell.x - hi)
        cell.phi = math.pi - cell.phi
    if cell.y < ext:
        cell.y = ext + (ext - cell.y)
        cell.phi = -cell.phi
    elif cell.y > config.height - 1 - ext:
        hi = config.height - 1 - ext
        cell.y = hi - (cell.y - hi)
        cell.phi = -cell.phi


def simulate(config: SimConfig) -> SimulationResult:
    """Run the simulation; seeded runs are bit-reproducible."""
    rng = np.random.default_rng(config.seed)
    shape = (config.height, config.width)
    arena = _Arena(shape, config.min_gap)
    cells: list[_Cell] = []
    placed_masks: dict[int, tuple] = {}
    next_id = 1
    for _ in range(config.cell_count):
        cell = _spawn_cell(rng, config, next_id)
        for attempt in range(config.max_place_tries):
            ext = _cell_extent(cell) + 1.0
            cell.x = rng.uniform(ext, config.width - 1 - ext)
            cell.y = rng.uniform(ext, config.height - 1 - ext)
            cell.phi = rng.uniform(-math.pi, math.pi)
            slc, mask = _render_mask(cell, shape)
            if slc is not None and arena.fits(slc, mask):
                arena.paint(cell.cell_id, slc, mask)
                placed_masks[cell.cell_id] = (slc, mask)
                break
        else:
            raise RuntimeError(
                f"could not place {config.cell_count} cells without overlap "
                f"(stuck after {config.max_place_tries} tries)"
            )
        cells.append(cell)
        next_id += 1

    frames: list[np.ndarray] = []
    frame_cell_labels: list[dict[int, int]] = []
    graph = TrackGraph()
    links: list[tuple[int, dict[int, list[int]]]] = []  # (frame, mother -> children)
    turn_sigma = (1.0 - config.direction_persistence) * math.pi / 2.0

    for frame_index in range(config.frame_count):
        if frame_index > 0:
            parent_map: dict[int, list[int]] = {}
            # divisions first: daughters stay inside the mother's footprint
            if config.division_prob > 0:
                for cell in list(cells):
                    min_len = config.divide_min_length
                    divisible = (
                        cell.length >= min_len
                        if config.shape == "rod"
                        else cell.radius >= 0.9 * config.blob_radius[1]
                    )
                    if divisible and rng.random() < config.division_prob:
                        arena.erase(cell.cell_id, *placed_masks[cell.cell_id])
                        daughters = _divide(cell, rng, config, next_id)
                        next_id += 2
                        kids = []
                        ok = True
                        for d in daughters:
                            slc, mask = _render_mask(d, shape)
                            if slc is None or not arena.fits(slc, mask):
                                ok = False
                                break
                            arena.paint(d.cell_id, slc, mask)
                            placed_masks[d.cell_id] = (slc, mask)
                            kids.append(d)
                        if not ok:
                            for d in kids:
                                arena.erase(d.cell_id, *placed_masks.pop(d.cell_id))
                            slc, mask = placed_masks[cell.cell_id]
                            arena.paint(cell.cell_id, slc, mask)
                            continue
                        parent_map[cell.cell_id] = [d.cell_id for d in daughters]
                        placed_masks.pop(cell.cell_id)
                        cells.remove(cell)
                        cells.extend(daughters)
                        cells.sort(key=lambda c: c.cell_id)
            # movement with collision rejection
            dead = []
            for cell in cells:
                if config.shape == "rod" and config.growth_rate > 0:
                    cell.length = min(
                        cell.length + config.growth_rate, config.rod_length[1] * 1.3
                    )
                arena.erase(cell.cell_id, *placed_masks[cell.cell_id])
                old = (cell.x, cell.y, cell.phi)
                moved = False
                for attempt in range(8):
                    cell.phi = old[2] + rng.normal(0.0, turn_sigma) + attempt * rng.normal(0.0, 0.5)
                    cell.x = old[0] + cell.speed * math.cos(cell.phi)
                    cell.y = old[1] + cell.speed * math.sin(cell.phi)
                    if config.boundary == "reflect":
                        _reflect(cell, config)
                    slc, mask = _render_mask(cell, shape)
                    if slc is None:
                        if config.boundary == "open":
                            moved = True  # left the field entirely
                            dead.append(cell)
                            placed_masks.pop(cell.cell_id)
                            break
                        continue
                    if arena.fits(slc, mask):
                        arena.paint(cell.cell_id, slc, mask)
                        placed_masks[cell.cell_id] = (slc, mask)
                        moved = True
                        break
                    cell.x, cell.y = old[0], old[1]
                if not moved:
                    cell.x, cell.y, cell.phi = old
                    slc, mask = _render_mask(cell, shape)
                    arena.paint(cell.cell_id, slc, mask)
                    placed_masks[cell.cell_id] = (slc, mask)
            for cell in dead:
                cells.remove(cell)
            links.append((frame_index, parent_map))

        raster = np.zeros(shape, np.int32)
        for cell in cells:
            slc, mask = placed_masks[cell.cell_id]
            assert not (raster[slc][mask] != 0).any(), "simulated cells overlap"
            raster[slc][mask] = cell.cell_id
        labels = relabel_components(raster)
        cell_to_label = {}
        for lab, slc in enumerate(ndi.find_objects(labels), start=1):
            yy, xx = np.nonzero(labels[slc] == lab)
            cell_to_label[int(raster[slc][yy[0], xx[0]])] = lab
        if len(cell_to_label) != len(cells):
            raise AssertionError("a simulated cell rasterized into several components")
        frames.append(labels)
        frame_cell_labels.append(cell_to_label)
        graph.add_frame(region_properties(labels, frame_index=frame_index))

    for frame_index, parent_map in links:
        prev = frame_cell_labels[frame_index - 1]
        cur = frame_cell_labels[frame_index]
        child_of = {kid: mom for mom, kids in parent_map.items() for kid in kids}
        for cell_id, label in cur.items():
            if cell_id in prev:
                graph.add_edge((frame_index - 1, prev[cell_id]), (frame_index, label))
            elif cell_id in child_of:
                mom = child_of[cell_id]
                graph.add_edge((frame_index - 1, prev[mom]), (frame_index, label))
    graph.derive_multiplicity_from_edges()
    return SimulationResult(
        config=config, frames=frames, graph=graph, frame_cell_labels=frame_cell_labels
    )


def _divide(cell: _Cell, rng, config, next_id) -> list[_Cell]:
    gap = max(config.min_gap, 1.0)
    kids = []
    if config.shape == "rod":
        child_len = cell.length / 2.0 - gap / 2.0
        offset = cell.length / 4.0 + gap / 4.0
        ca, sa = math.cos(cell.phi), math.sin(cell.phi)
        for k, sign in enumerate((-1.0, 1.0)):
            kids.append(
                _Cell(
                    cell_id=next_id + k,
                    x=cell.x + sign * offset * ca,
                    y=cell.y + sign * offset * sa,
                    phi=cell.phi + rng.normal(0.0, 0.1),
                    speed=cell.speed,
                    length=child_len,
                    radius=cell.radius,
                )
            )
    else:
        child_r = cell.radius / SQRT2
        offset = cell.radius - child_r
        ca, sa = math.cos(cell.phi), math.sin(cell.phi)
        for k, sign in enumerate((-1.0, 1.0)):
            kids.append(
                _Cell(
                    cell_id=next_id + k,
                    x=cell.x + sign * offset * ca,
                    y=cell.y + sign * offset * sa,
                    phi=cell.phi + rng.normal(0.0, 0.3),
                    speed=cell.speed,
                    length=0.0,
                    radius=child_r,
                    wobble=cell.wobble,
                )
            )
    return kids


# ------------------------------------------------------------------ proxies


def video_proxies(
    label_frames: list[np.ndarray], graph: TrackGraph
) -> tuple[list[ProxyFrame], list[ProxyPair]]:
    """Clean per-frame proxies plus consecutive-pair tracking proxies."""
    medoids = [cell_medoids(labels) for labels in label_frames]
    frames = []
    for labels in label_frames:
        frames.append(make_proxy_frame(labels))
    pairs = []
    for t in range(len(label_frames) - 1):
        pair = make_proxy_pair(
            label_frames[t],
            label_frames[t + 1],
            pair_links(graph, t, t + 1),
            medoids_a=medoids[t],
            medoids_b=medoids[t + 1],
        )
        pair.frame_a = t
        pair.frame_b = t + 1
        pairs.append(pair)
    return frames, pairs


# ------------------------------------------------------------------ corruption


@dataclass
class InjectedError:
    frame: int
    kind: str  # 'under' | 'over'
    labels: tuple[int, ...]


def _regen_object_proxies(frame_px: ProxyFrame, member_mask: np.ndarray, slc) -> None:
    """Recompute EDM and GDCM inside one belief object (label-local)."""
    dist = ndi.distance_transform_edt(member_mask)
    edm_view = frame_px.edm[slc]
    edm_view[member_mask] = dist[member_mask]
    _regen_gdcm(frame_px, member_mask, slc)


def _regen_gdcm(frame_px: ProxyFrame, member_mask: np.ndarray, slc) -> None:
    yy, xx = np.nonzero(member_mask)
    mx, my = medoid_of(xx, yy)
    ax, dg = geodesic_steps(np.ascontiguousarray(member_mask), my, mx)
    inside = ax >= 0
    gdcm_view = frame_px.gdcm[slc]
    gdcm_view[inside] = ax[inside] + dg[inside] * SQRT2


def _inject_under(frame_px: ProxyFrame, labels, la, lb, bridge_max) -> bool:
    """Fuse two close cells into one belief object.

    Mimics the realistic failure: the EDM keeps each cell's own values (its
    interface valley survives, only the gap is bridged with low positive
    values) while the GDCM collapses to a single center, so the fragments of
    the EDM watershed get merged for lack of a second center.
    """
    both = (labels == la) | (labels == lb)
    obj = ndi.find_objects(both.astype(np.int8))[0]
    pad = int(math.ceil(bridge_max)) + 2
    slc = (
        slice(max(obj[0].start - pad, 0), min(obj[0].stop + pad, labels.shape[0])),
        slice(max(obj[1].start - pad, 0), min(obj[1].stop + pad, labels.shape[1])),
    )
    crop = labels[slc]
    a = crop == la
    b = crop == lb
    # thin neck along the closest approach, like a membrane invagination:
    # wide bridges would displace the fragment medoids used for relinking
    ay, ax_ = np.nonzero(a)
    by, bx = np.nonzero(b)
    d2 = (ay[:, None] - by[None, :]) ** 2 + (ax_[:, None] - bx[None, :]) ** 2
    ia, ib = np.unravel_index(np.argmin(d2), d2.shape)
    pa = np.array([ay[ia], ax_[ia]], float)
    pb = np.array([by[ib], bx[ib]], float)
    yy, xx = np.mgrid[0 : crop.shape[0], 0 : crop.shape[1]]
    seg_vec = pb - pa
    seg_len2 = max(float(seg_vec @ seg_vec), 1e-9)
    t = np.clip(((yy - pa[0]) * seg_vec[0] + (xx - pa[1]) * seg_vec[1]) / seg_len2, 0, 1)
    dist2 = (yy - pa[0] - t * seg_vec[0]) ** 2 + (xx - pa[1] - t * seg_vec[1]) ** 2
    bridge = (dist2 <= 1.3**2) & (crop == 0)
    merged = a | b | bridge
    n_comp = ndi.label(merged, np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))[1]
    if n_comp != 1:
        return False
    edm_view = frame_px.edm[slc]
    edm_view[bridge] = 1.0
    _regen_gdcm(frame_px, merged, slc)
    return True


def _inject_over(frame_px: ProxyFrame, labels, lc) -> bool:
    """Split one cell into two belief halves across its minor axis."""
    slc = ndi.find_objects(labels)[lc - 1]
    pslc = (
        slice(max(slc[0].start - 1, 0), min(slc[0].stop + 1, labels.shape[0])),
        slice(max(slc[1].start - 1, 0), min(slc[1].stop + 1, labels.shape[1])),
    )
    mask = labels[pslc] == lc
    yy, xx = np.nonzero(mask)
    cx, cy = xx.mean(), yy.mean()
    # project on the major axis and cut at the centroid
    mu20 = np.mean((xx - cx) ** 2)
    mu02 = np.mean((yy - cy) ** 2)
    mu11 = np.mean((xx - cx) * (yy - cy))
    angle = 0.5 * math.atan2(2 * mu11, mu20 - mu02)
    proj = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
    half_a = np.zeros_like(mask)
    half_b = np.zeros_like(mask)
    half_a[yy[proj < 0], xx[proj < 0]] = True
    half_b[yy[proj >= 0], xx[proj >= 0]] = True
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    for half in (half_a, half_b):
        if not half.any() or ndi.label(half, four)[1] != 1:
            return False
    for half in (half_a, half_b):
        _regen_object_proxies(frame_px, half, pslc)
    return True


def corrupt_proxies(
    label_frames: list[np.ndarray],
    graph: TrackGraph,
    frames_px: list[ProxyFrame],
    pairs_px: list[ProxyPair],
    corruption: CorruptionConfig,
) -> tuple[list[ProxyFrame], list[ProxyPair], list[InjectedError]]:
    """Apply the configured corruption to copies of the clean proxies.

    Zero rates return exact copies. Injected segmentation defects touch only
    the pixels of the involved cells (plus bridged gap pixels), never other
    cells.
    """
    rng = np.random.default_rng(corruption.seed)
    frames_px = [ProxyFrame(edm=f.edm.copy(), gdcm=f.gdcm.copy()) for f in frames_px]
    pairs_px = [
        ProxyPair(
            frame_a=p.frame_a,
            frame_b=p.frame_b,
            fwd_dx=p.fwd_dx.copy(),
            fwd_dy=p.fwd_dy.copy(),
            bwd_dx=p.bwd_dx.copy(),
            bwd_dy=p.bwd_dy.copy(),
            fwd_mult=p.fwd_mult.copy(),
            bwd_mult=p.bwd_mult.copy(),
        )
        for p in pairs_px
    ]
    injected: list[InjectedError] = []
    last = len(label_frames) - 1

    if corruption.under_seg_rate > 0 or corruption.over_seg_rate > 0:
        from .grid import contour_distance  # local import to avoid cycle noise

        for f in range(1, last):
            labels = label_frames[f]
            regions = {r.label: r for r in region_properties(labels, frame_index=f)}
            touched: set[int] = set()
            if corruption.under_seg_rate > 0:
                keys = sorted(regions)
                for i, la in enumerate(keys):
                    for lb in keys[i + 1 :]:
                        ra, rb = regions[la], regions[lb]
                        mx = abs(ra.centroid[0] - rb.centroid[0])
                        my = abs(ra.centroid[1] - rb.centroid[1])
                        if max(mx, my) > 40:
                            continue
                        if rng.random() >= corruption.under_seg_rate:
                            continue
                        if la in touched or lb in touched:
                            continue
                        if contour_distance(ra, rb) > corruption.bridge_max_gap:
                            continue
                        # only transient defects on established tracks: both
                        # cells must exist before and after the event
                        if not (graph.predecessors((f, la)) and graph.predecessors((f, lb))):
                            continue
                        if not (graph.successors((f, la)) and graph.successors((f, lb))):
                            continue
                        if _inject_under(
                            frames_px[f], labels, la, lb, corruption.bridge_max_gap
                        ):
                            touched.update((la, lb))
                            injected.append(InjectedError(frame=f, kind="under", labels=(la, lb)))
            if corruption.over_seg_rate > 0:
                for la in sorted(regions):
                    if la in touched:
                        continue
                    if regions[la].area < 24:
                        continue
                    if rng.random() >= corruption.over_seg_rate:
                        continue
                    if _inject_over(frames_px[f], labels, la):
                        touched.add(la)
                        injected.append(InjectedError(frame=f, kind="over", labels=(la,)))

    if corruption.proxy_noise_sigma > 0:
        for frame_px in frames_px:
            frame_px.edm += rng.normal(0.0, corruption.proxy_noise_sigma, frame_px.edm.shape)
            frame_px.gdcm += rng.normal(0.0, corruption.proxy_noise_sigma, frame_px.gdcm.shape)

    jitter_abs = corruption.displacement_jitter_sigma
    jitter_rel = corruption.displacement_jitter_rel
    if jitter_abs > 0 or jitter_rel > 0:
        for t, pair in enumerate(pairs_px):
            for labels, dx, dy in (
                (label_frames[t], pair.fwd_dx, pair.fwd_dy),
                (label_frames[t + 1], pair.bwd_dx, pair.bwd_dy),
            ):
                for lab, slc in enumerate(ndi.find_objects(labels), start=1):
                    if slc is None:
                        continue
                    mask = labels[slc] == lab
                    yy, xx = np.nonzero(mask)
                    vx = dx[slc][yy[0], xx[0]]
                    vy = dy[slc][yy[0], xx[0]]
                    ox = oy = 0.0
                    if jitter_rel > 0:
                        ox += rng.uniform(-jitter_rel * abs(vx), jitter_rel * abs(vx))
                        oy += rng.uniform(-jitter_rel * abs(vy), jitter_rel * abs(vy))
                    if jitter_abs > 0:
                        ox += rng.normal(0.0, jitter_abs)
                        oy += rng.normal(0.0, jitter_abs)
                    dx[slc][mask] += ox
                    dy[slc][mask] += oy

    if corruption.multiplicity_flip_rate > 0:
        for t, pair in enumerate(pairs_px):
            for labels, mult in (
                (label_frames[t], pair.fwd_mult),
                (label_frames[t + 1], pair.bwd_mult),
            ):
                for lab, slc in enumerate(ndi.find_objects(labels), start=1):
                    if slc is None:
                        continue
                    if rng.random() >= corruption.multiplicity_flip_rate:
                        continue
                    mask = labels[slc] == lab
                    yy, xx = np.nonzero(mask)
                    current = int(np.argmax(mult[:, slc[0], slc[1]][:, yy[0], xx[0]]))
                    new = int(rng.choice([c for c in range(3) if c != current]))
                    for c in range(3):
                        view = mult[c][slc]
                        view[mask] = 1.0 if c == new else 0.0
    return frames_px, pairs_px, injected
