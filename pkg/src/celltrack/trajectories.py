"""Trajectory statistics: mean squared displacement, speed against length,
velocity-to-axis angles, and track-duration bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class TrackSeries:
    """Per-cell time series as exported in the track CSV."""

    track_id: int
    lineage_id: int
    frames: np.ndarray  # strictly increasing
    x: np.ndarray
    y: np.ndarray
    area: np.ndarray
    axis_len: np.ndarray
    axis_angle: np.ndarray

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ValueError("a track needs at least one sample")
        if np.any(np.diff(self.frames) <= 0):
            raise ValueError("track frames must be strictly increasing")

    @property
    def duration(self) -> int:
        return len(self.frames)


def msd(tracks, max_lag, px_size=1.0, dt=1.0):
    """Time-origin-averaged mean squared displacement.

    MSD(lag) averages |r(t+lag) - r(t)|^2 over all tracks and time origins,
    weighting every displacement sample equally. Returns (lags, values,
    sample counts) in physical units; lags without samples are dropped.
    Requests beyond the longest track are truncated.
    """
    if not tracks:
        raise ValueError("no tracks given")
    longest = max(int(t.frames[-1] - t.frames[0]) for t in tracks)
    if max_lag > longest:
        max_lag = longest
    sums = np.zeros(max_lag + 1)
    counts = np.zeros(max_lag + 1, np.int64)
    for track in tracks:
        offsets = (track.frames - track.frames[0]).astype(int)
        span = offsets[-1] + 1
        xs = np.full(span, np.nan)
        ys = np.full(span, np.nan)
        xs[offsets] = track.x
        ys[offsets] = track.y
        for lag in range(1, min(max_lag, span - 1) + 1):
            dx = xs[lag:] - xs[:-lag]
            dy = ys[lag:] - ys[:-lag]
            d2 = dx * dx + dy * dy
            good = ~np.isnan(d2)
            sums[lag] += d2[good].sum()
            counts[lag] += int(good.sum())
    lags = np.nonzero(counts[1:])[0] + 1
    values = sums[lags] / counts[lags] * px_size * px_size
    return lags * dt, values, counts[lags]


def speed_by_length(
    tracks,
    bin_size_px,
    weight_by_duration=True,
    px_size=1.0,
    dt=1.0,
    normalization_frames=1000,
):
    """Mean speed binned by cell length, weighted by trajectory duration.

    Each track contributes its mean frame-to-frame speed and mean major-axis
    length. Rows are (bin_low, bin_high, weighted mean speed, standard error,
    weighted count) where a count of 1 corresponds to one cell tracked for
    ``normalization_frames`` frames. Empty bins are omitted.
    """
    if bin_size_px <= 0:
        raise ValueError("bin_size_px must be positive")
    per_track = []
    for track in tracks:
        if track.duration < 2:
            continue
        steps = np.diff(track.frames)
        dist = np.hypot(np.diff(track.x), np.diff(track.y))
        speed = float(np.mean(dist / steps)) * px_size / dt
        length = float(np.mean(track.axis_len)) * px_size
        weight = float(track.duration) if weight_by_duration else 1.0
        per_track.append((length, speed, weight))
    bins: dict[int, list] = {}
    for length, speed, weight in per_track:
        bins.setdefault(int(length // (bin_size_px * px_size)), []).append((speed, weight))
    rows = []
    for index in sorted(bins):
        data = np.array(bins[index])
        speeds, weights = data[:, 0], data[:, 1]
        mean = float(np.average(speeds, weights=weights))
        if len(speeds) > 1:
            var = float(np.average((speeds - mean) ** 2, weights=weights))
            sem = math.sqrt(var / len(speeds))
        else:
            sem = 0.0
        rows.append(
            (
                index * bin_size_px * px_size,
                (index + 1) * bin_size_px * px_size,
                mean,
                sem,
                float(weights.sum()) / normalization_frames,
            )
        )
    return rows


def _central_velocities(track, px_size, dt):
    """Central-difference velocity where both neighbors exist, one-sided at
    the track ends; paired with the sample's axis angle."""
    n = track.duration
    out = []
    for i in range(n):
        if n == 1:
            break
        if i == 0:
            vx = (track.x[1] - track.x[0]) / (track.frames[1] - track.frames[0])
            vy = (track.y[1] - track.y[0]) / (track.frames[1] - track.frames[0])
        elif i == n - 1:
            vx = (track.x[-1] - track.x[-2]) / (track.frames[-1] - track.frames[-2])
            vy = (track.y[-1] - track.y[-2]) / (track.frames[-1] - track.frames[-2])
        else:
            vx = (track.x[i + 1] - track.x[i - 1]) / (track.frames[i + 1] - track.frames[i - 1])
            vy = (track.y[i + 1] - track.y[i - 1]) / (track.frames[i + 1] - track.frames[i - 1])
        out.append((vx * px_size / dt, vy * px_size / dt, track.axis_angle[i]))
    return out


def velocity_axis_angles(tracks, n_bins=9, px_size=1.0, dt=1.0):
    """Acute angles between instantaneous velocity and the cell's major axis.

    Angles are folded to [0, 90] degrees. Returns (bin_edges_deg, histogram,
    mean speed per bin); zero-velocity samples are skipped.
    """
    angles = []
    speeds = []
    for track in tracks:
        for vx, vy, axis in _central_velocities(track, px_size, dt):
            speed = math.hypot(vx, vy)
            if speed == 0.0:
                continue
            diff = abs(math.atan2(vy, vx) - axis) % math.pi
            diff = min(diff, math.pi - diff)
            angles.append(math.degrees(diff))
            speeds.append(speed)
    edges = np.linspace(0.0, 90.0, n_bins + 1)
    hist = np.zeros(n_bins, np.int64)
    speed_sum = np.zeros(n_bins)
    for angle, speed in zip(angles, speeds):
        index = min(int(angle / 90.0 * n_bins), n_bins - 1)
        hist[index] += 1
        speed_sum[index] += speed
    mean_speed = np.divide(
        speed_sum, hist, out=np.zeros(n_bins), where=hist > 0
    )
    return edges, hist, mean_speed


@dataclass
class TrackStats:
    total_tracks: int
    complete_tracks: int  # span the whole video
    incomplete_tracks: int
    suspicious_ends: int  # end early and away from every image edge


def track_statistics(tracks, video_length, width, height, boundary_margin_px=3.0):
    """Track-duration table with the early-interior-end count.

    A track end is suspicious when the track stops before the last frame and
    its final position is farther than the margin from every image edge (so
    the cell cannot simply have left the field of view).
    """
    total = len(tracks)
    complete = 0
    suspicious = 0
    for track in tracks:
        if track.duration >= video_length:
            complete += 1
            continue
        if track.frames[-1] >= video_length - 1:
            continue
        ex, ey = track.x[-1], track.y[-1]
        near_edge = (
            ex <= boundary_margin_px
            or ey <= boundary_margin_px
            or ex >= width - 1 - boundary_margin_px
            or ey >= height - 1 - boundary_margin_px
        )
        if not near_edge:
            suspicious += 1
    return TrackStats(
        total_tracks=total,
        complete_tracks=complete,
        incomplete_tracks=total - complete,
        suspicious_ends=suspicious,
    )
