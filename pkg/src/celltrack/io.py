"""File formats: float-plane binaries, 16-bit label rasters, track CSV.

All formats are deterministic byte-for-byte given identical inputs, so
pipeline outputs can be compared across runs and thread counts.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .graph import TrackGraph
from .proxies import ProxyFrame, ProxyPair
from .tracking import Track, extract_tracks
from .trajectories import TrackSeries

FPLN_MAGIC = b"FPLN"
FPLN_VERSION = 1
TRACK_CSV_HEADER = "track_id,lineage_id,frame,label,x,y,area,axis_len,axis_angle,parent_track_id"
LABEL_MAX = 65535


class DataFormatError(Exception):
    """Malformed input file; the message names the byte offset or CSV row."""


# ------------------------------------------------------------- float planes


def write_float_planes(path, channels: list[tuple[str, np.ndarray]]) -> None:
    """Write named float32 planes: FPLN magic, version u8, width u32 LE,
    height u32 LE, channel count u16 LE, length-prefixed (u16 LE) UTF-8
    channel names, then each channel as row-major little-endian float32."""
    if not channels:
        raise ValueError("need at least one channel")
    height, width = channels[0][1].shape
    parts = [FPLN_MAGIC, struct.pack("<BIIH", FPLN_VERSION, width, height, len(channels))]
    for name, plane in channels:
        if plane.shape != (height, width):
            raise ValueError("all channels must share one shape")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
    for _, plane in channels:
        parts.append(np.ascontiguousarray(plane, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_float_planes(path) -> dict[str, np.ndarray]:
    """Read an FPLN file into an ordered name -> float64 plane mapping."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FPLN_MAGIC:
        raise DataFormatError(f"{path}: bad magic at byte 0")
    if len(data) < 15:
        raise DataFormatError(f"{path}: truncated header at byte {len(data)}")
    version, width, height, n_channels = struct.unpack("<BIIH", data[4:15])
    if version != FPLN_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at byte 4")
    offset = 15
    names = []
    for _ in range(n_channels):
        if offset + 2 > len(data):
            raise DataFormatError(f"{path}: truncated name table at byte {offset}")
        (length,) = struct.unpack("<H", data[offset : offset + 2])
        offset += 2
        if offset + length > len(data):
            raise DataFormatError(f"{path}: truncated channel name at byte {offset}")
        names.append(data[offset : offset + length].decode("utf-8"))
        offset += length
    plane_bytes = 4 * width * height
    expected = offset + plane_bytes * n_channels
    if len(data) != expected:
        raise DataFormatError(
            f"{path}: size mismatch at byte {min(len(data), expected)}:"
            f" expected {expected} bytes, found {len(data)}"
        )
    planes = {}
    for name in names:
        plane = np.frombuffer(data, dtype="<f4", count=width * height, offset=offset)
        planes[name] = plane.reshape(height, width).astype(np.float64)
        offset += plane_bytes
    return planes


def frame_plane_path(directory, frame: int) -> Path:
    return Path(directory) / f"frame_{frame:05d}.fpln"


def pair_plane_path(directory, frame_a: int, frame_b: int) -> Path:
    return Path(directory) / f"pair_{frame_a:05d}_{frame_b:05d}.fpln"


def write_proxy_frame(directory, frame: int, proxy: ProxyFrame) -> None:
    write_float_planes(
        frame_plane_path(directory, frame), [("edm", proxy.edm), ("gdcm", proxy.gdcm)]
    )


def read_proxy_frame(directory, frame: int) -> ProxyFrame:
    planes = read_float_planes(frame_plane_path(directory, frame))
    try:
        return ProxyFrame(edm=planes["edm"], gdcm=planes["gdcm"])
    except KeyError as missing:
        raise DataFormatError(
            f"{frame_plane_path(directory, frame)}: missing channel {missing}"
        ) from None


_PAIR_CHANNELS = (
    "fwd_dx",
    "fwd_dy",
    "bwd_dx",
    "bwd_dy",
    "fwd_mult0",
    "fwd_mult1",
    "fwd_mult2",
    "bwd_mult0",
    "bwd_mult1",
    "bwd_mult2",
)


def write_proxy_pair(directory, pair: ProxyPair) -> None:
    planes = [
        ("fwd_dx", pair.fwd_dx),
        ("fwd_dy", pair.fwd_dy),
        ("bwd_dx", pair.bwd_dx),
        ("bwd_dy", pair.bwd_dy),
    ]
    planes += [(f"fwd_mult{c}", pair.fwd_mult[c]) for c in range(3)]
    planes += [(f"bwd_mult{c}", pair.bwd_mult[c]) for c in range(3)]
    write_float_planes(pair_plane_path(directory, pair.frame_a, pair.frame_b), planes)


def read_proxy_pair(directory, frame_a: int, frame_b: int) -> ProxyPair:
    path = pair_plane_path(directory, frame_a, frame_b)
    planes = read_float_planes(path)
    missing = [name for name in _PAIR_CHANNELS if name not in planes]
    if missing:
        raise DataFormatError(f"{path}: missing channels {missing}")
    return ProxyPair(
        frame_a=frame_a,
        frame_b=frame_b,
        fwd_dx=planes["fwd_dx"],
        fwd_dy=planes["fwd_dy"],
        bwd_dx=planes["bwd_dx"],
        bwd_dy=planes["bwd_dy"],
        fwd_mult=np.stack([planes[f"fwd_mult{c}"] for c in range(3)]),
        bwd_mult=np.stack([planes[f"bwd_mult{c}"] for c in range(3)]),
    )


# ------------------------------------------------------------- label rasters


def label_path(directory, frame: int) -> Path:
    return Path(directory) / f"labels_{frame:05d}.png"


def write_label_frame(path, labels: np.ndarray) -> None:
    if labels.max() > LABEL_MAX:
        raise ValueError(f"more than {LABEL_MAX} labels cannot be stored in 16 bits")
    if labels.min() < 0:
        raise ValueError("labels must be non-negative")
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


def read_label_frame(path) -> np.ndarray:
    try:
        image = Image.open(path)
        arr = np.array(image)
    except Exception as exc:
        raise DataFormatError(f"{path}: not a readable label raster ({exc})") from None
    if arr.ndim != 2:
        raise DataFormatError(f"{path}: expected a single-channel raster")
    return arr.astype(np.int32)


def write_label_video(directory, frames) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f, labels in enumerate(frames):
        write_label_frame(label_path(directory, f), labels)


def read_label_video(directory) -> list[np.ndarray]:
    directory = Path(directory)
    paths = sorted(directory.glob("labels_*.png"))
    if not paths:
        raise DataFormatError(f"{directory}: no labels_*.png files found")
    frames = [read_label_frame(p) for p in paths]
    for f, path in enumerate(paths):
        if path.name != f"labels_{f:05d}.png":
            raise DataFormatError(f"{path}: frame files are not consecutive from 0")
    return frames


# ----------------------------------------------------------------- track CSV


def format_track_csv(graph: TrackGraph, tracks: list[Track] | None = None) -> str:
    """Track CSV text: one row per cell instance, ordered by (track, frame).

    x and y are the cell centroid. A track's parent is the track of its
    single predecessor (for several predecessors, the smallest track id; the
    single parent column cannot express multi-parent merge links).
    """
    if tracks is None:
        tracks = extract_tracks(graph)
    lines = [TRACK_CSV_HEADER]
    for track in tracks:
        parent = "" if track.parent_track_id is None else str(track.parent_track_id)
        for key in track.nodes:
            region = graph.nodes[key]
            cx, cy = region.centroid
            lines.append(
                f"{track.track_id},{track.lineage_id},{key[0]},{key[1]},"
                f"{cx:.6f},{cy:.6f},{region.area},"
                f"{region.major_axis_length:.6f},{region.major_axis_angle:.6f},{parent}"
            )
    return "\n".join(lines) + "\n"


def write_track_csv(path, graph: TrackGraph) -> None:
    Path(path).write_text(format_track_csv(graph))


def read_track_rows(path):
    """Parse and validate a track CSV; returns a list of row dicts."""
    text = Path(path).read_text()
    lines = text.strip().splitlines()
    if not lines or lines[0] != TRACK_CSV_HEADER:
        raise DataFormatError(f"{path}: row 1: bad or missing header")
    rows = []
    seen = set()
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 10:
            raise DataFormatError(f"{path}: row {i}: expected 10 fields, got {len(parts)}")
        try:
            row = {
                "track_id": int(parts[0]),
                "lineage_id": int(parts[1]),
                "frame": int(parts[2]),
                "label": int(parts[3]),
                "x": float(parts[4]),
                "y": float(parts[5]),
                "area": int(parts[6]),
                "axis_len": float(parts[7]),
                "axis_angle": float(parts[8]),
                "parent_track_id": int(parts[9]) if parts[9] else None,
            }
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {i}: {exc}") from None
        key = (row["frame"], row["label"])
        if key in seen:
            raise DataFormatError(f"{path}: row {i}: duplicate (frame, label) {key}")
        seen.add(key)
        rows.append(row)
    track_ids = {row["track_id"] for row in rows}
    for i, row in enumerate(rows, start=2):
        parent = row["parent_track_id"]
        if parent is not None and parent not in track_ids:
            raise DataFormatError(f"{path}: row {i}: parent track {parent} does not exist")
    return rows


def edges_from_rows(rows):
    """Temporal links encoded by a track CSV: consecutive rows of each track
    plus the parent link into each track's first cell."""
    by_track: dict[int, list] = {}
    for row in rows:
        by_track.setdefault(row["track_id"], []).append(row)
    edges = []
    for track_id, track_rows in sorted(by_track.items()):
        track_rows.sort(key=lambda r: r["frame"])
        for a, b in zip(track_rows, track_rows[1:]):
            edges.append(((a["frame"], a["label"]), (b["frame"], b["label"])))
        parent = track_rows[0]["parent_track_id"]
        if parent is not None and parent in by_track:
            parent_rows = sorted(by_track[parent], key=lambda r: r["frame"])
            edges.append(
                (
                    (parent_rows[-1]["frame"], parent_rows[-1]["label"]),
                    (track_rows[0]["frame"], track_rows[0]["label"]),
                )
            )
    return edges


def tracks_from_rows(rows) -> list[TrackSeries]:
    """Analysis-ready per-track series from CSV rows."""
    by_track: dict[int, list] = {}
    for row in rows:
        by_track.setdefault(row["track_id"], []).append(row)
    series = []
    for track_id, track_rows in sorted(by_track.items()):
        track_rows.sort(key=lambda r: r["frame"])
        series.append(
            TrackSeries(
                track_id=track_id,
                lineage_id=track_rows[0]["lineage_id"],
                frames=np.array([r["frame"] for r in track_rows]),
                x=np.array([r["x"] for r in track_rows]),
                y=np.array([r["y"] for r in track_rows]),
                area=np.array([r["area"] for r in track_rows], float),
                axis_len=np.array([r["axis_len"] for r in track_rows]),
                axis_angle=np.array([r["axis_angle"] for r in track_rows]),
            )
        )
    return series
