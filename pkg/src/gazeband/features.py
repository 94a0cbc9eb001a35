"""Velocity segments: Savitzky-Golay differentiation, windowing, normalisation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateChannel, InvalidOrder, InvalidWindow, RecordingTooShort

SEGMENT_LENGTH = 5000
VELOCITY_CLAMP = 1000.0


class Band(str, enum.Enum):
    SIGNAL = "signal"
    NOISE = "noise"
    UNFILTERED = "unfiltered"


@dataclass(frozen=True, eq=False)
class VelocitySegment:
    vh: np.ndarray
    vv: np.ndarray
    subject_id: str
    round_id: int
    session_id: int
    task: str
    window_index: int
    band: Band = Band.UNFILTERED

    def __post_init__(self):
        if len(self.vh) != len(self.vv):
            raise ValueError("channel lengths differ")

    def with_channels(self, vh, vv):
        return replace(self, vh=vh, vv=vv)

    def as_array(self, dtype=np.float64):
        return np.stack([self.vh, self.vv]).astype(dtype, copy=False)


@dataclass(frozen=True)
class NormStats:
    mean_h: float
    mean_v: float
    std_h: float
    std_v: float

    def to_dict(self):
        return {"mean_h": self.mean_h, "mean_v": self.mean_v,
                "std_h": self.std_h, "std_v": self.std_v}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("mean_h", "mean_v", "std_h", "std_v")})


def savgol_derivative_coeffs(window=7, order=2, sample_rate_hz=1.0):
    """First-derivative Savitzky-Golay weights for samples x[t-m .. t+m].

    ``np.dot(weights, x[t-m:t+m+1])`` estimates dx/dt at t in units per
    second.  For (7, 2) the weights are k/28 * fs for k = -3..3.
    """
    if window < 1 or window % 2 == 0:
        raise InvalidWindow(f"window must be odd and positive, got {window}")
    if order < 1 or order >= window:
        raise InvalidOrder(f"order must be in [1, window), got {order}")
    m = window // 2
    k = np.arange(-m, m + 1, dtype=np.float64)
    vander = np.vander(k, order + 1, increasing=True)
    # row 1 of the pseudo-inverse gives the linear coefficient of the fit
    coeffs = np.linalg.pinv(vander)[1]
    # the slope weights are exactly antisymmetric; enforce it against rounding
    coeffs = 0.5 * (coeffs - coeffs[::-1])
    return coeffs * sample_rate_hz


def differentiate_channel(x, window=7, order=2, sample_rate_hz=1000.0):
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        raise RecordingTooShort(f"need at least {window} samples, got {len(x)}")
    w = savgol_derivative_coeffs(window, order, sample_rate_hz)
    m = window // 2
    nan = np.isnan(x)
    filled = np.where(nan, 0.0, x)
    padded = np.pad(filled, m, mode="reflect")
    out = np.correlate(padded, w, mode="valid")
    if nan.any():
        touched = np.convolve(np.pad(nan, m, mode="reflect").astype(np.float64),
                              np.ones(window), mode="valid") > 0
        out[touched] = np.nan
    return out


def differentiate(rec, window=7, order=2):
    """Horizontal and vertical velocity (deg/s) of a position recording."""
    fs = rec.sample_rate_hz
    return (differentiate_channel(rec.h, window, order, fs),
            differentiate_channel(rec.v, window, order, fs))


def segment(vh, vv, subject_id, round_id, session_id, task, band=Band.UNFILTERED,
            length=SEGMENT_LENGTH):
    """Non-overlapping windows from index 0; the trailing remainder is dropped."""
    n = min(len(vh), len(vv)) // length
    task = getattr(task, "value", task)
    return [VelocitySegment(vh=np.asarray(vh[i * length:(i + 1) * length], dtype=np.float64),
                            vv=np.asarray(vv[i * length:(i + 1) * length], dtype=np.float64),
                            subject_id=subject_id, round_id=round_id, session_id=session_id,
                            task=task, window_index=i, band=Band(band))
            for i in range(n)]


def clamp_velocity(seg, limit=VELOCITY_CLAMP):
    # np.clip leaves NaN as NaN
    return seg.with_channels(np.clip(seg.vh, -limit, limit), np.clip(seg.vv, -limit, limit))


def fit_norm_stats(segments):
    """Pooled per-channel mean/std over all valid samples of ``segments``.

    Two passes (mean, then squared deviations), each accumulated segment by
    segment in input order so the result is reproducible bit for bit.
    """
    segments = list(segments)
    count = np.zeros(2)
    total = np.zeros(2)
    for seg in segments:
        for c, x in enumerate((seg.vh, seg.vv)):
            x = x[~np.isnan(x)]
            count[c] += len(x)
            total[c] += x.sum()
    if (count == 0).any():
        raise DegenerateChannel("a channel has no valid samples")
    mean = total / count
    sq = np.zeros(2)
    for seg in segments:
        for c, x in enumerate((seg.vh, seg.vv)):
            d = x[~np.isnan(x)] - mean[c]
            sq[c] += np.dot(d, d)
    std = np.sqrt(sq / count)
    for c, name in enumerate("hv"):
        if not std[c] > 0:
            raise DegenerateChannel(f"channel {name}: zero variance")
    return NormStats(float(mean[0]), float(mean[1]), float(std[0]), float(std[1]))


def apply_norm(seg, stats):
    return seg.with_channels((seg.vh - stats.mean_h) / stats.std_h,
                             (seg.vv - stats.mean_v) / stats.std_v)


def finalize(seg):
    return seg.with_channels(np.nan_to_num(seg.vh, nan=0.0), np.nan_to_num(seg.vv, nan=0.0))


def recording_segments(rec, band, window=7, order=2, length=SEGMENT_LENGTH,
                       clamp=VELOCITY_CLAMP):
    """Velocity -> windows -> clamp, the part of the chain that needs no statistics."""
    vh, vv = differentiate(rec, window, order)
    segs = segment(vh, vv, rec.subject_id, rec.round_id, rec.session_id, rec.task, band, length)
    return [clamp_velocity(s, clamp) for s in segs]


def normalize_segments(segments, stats):
    """z-score -> zero-fill."""
    return [finalize(apply_norm(s, stats)) for s in segments]


def preprocess(rec, band, stats, window=7, order=2, length=SEGMENT_LENGTH,
               clamp=VELOCITY_CLAMP):
    """The complete chain: velocity, windows, clamp, z-score, NaN -> 0."""
    return normalize_segments(recording_segments(rec, band, window, order, length, clamp), stats)


def stack_segments(segments, dtype=np.float32):
    """(n, 2, length) array of finalized segments."""
    if not segments:
        return np.zeros((0, 2, SEGMENT_LENGTH), dtype=dtype)
    return np.stack([s.as_array(dtype) for s in segments])
