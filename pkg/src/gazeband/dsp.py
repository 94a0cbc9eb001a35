"""FIR band separation of gaze recordings.

A Hamming-windowed sinc low-pass is calibrated so its half-power point sits
at the requested frequency; the high-pass is its exact spectral complement,
so the two band outputs always add back to the gap-filled input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import (AllNaNChannel, CalibrationFailed, CutoffOutOfRange,
                     FreqOutOfRange, InvalidTapCount, RecordingTooShort, WrongKind)

DEFAULT_TAPS = 79
DEFAULT_CUTOFF_HZ = 75.0


class FilterKind(str, enum.Enum):
    LOW_PASS = "LowPass"
    HIGH_PASS_COMPLEMENT = "HighPassComplement"


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    kind: FilterKind
    nominal_cutoff_hz: float
    realized_minus3db_hz: float
    sample_rate_hz: float

    @property
    def num_taps(self):
        return len(self.taps)

    @property
    def group_delay(self):
        return (len(self.taps) - 1) // 2


@dataclass(frozen=True, eq=False)
class BandPair:
    signal: object
    noise: object
    raw_interpolated: object


def _windowed_sinc(num_taps, cutoff_hz, fs):
    half = (num_taps - 1) // 2
    n = np.arange(-half, half + 1, dtype=np.float64)
    fc = cutoff_hz / fs
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(num_taps)
    h = 0.5 * (h + h[::-1])
    return h / h.sum()


def _response(taps, freq_hz, fs):
    k = np.arange(len(taps))
    return np.sum(taps * np.exp(-2j * np.pi * freq_hz * k / fs))


def frequency_response(filt, freq_hz):
    """Complex response sum_k taps[k] exp(-j 2 pi f k / fs) at one frequency."""
    fs = filt.sample_rate_hz
    if not 0 <= freq_hz <= fs / 2:
        raise FreqOutOfRange(f"{freq_hz} Hz outside [0, {fs / 2}]")
    return complex(_response(filt.taps, freq_hz, fs))


def _gain2(taps, f, fs):
    return abs(_response(taps, f, fs)) ** 2


def _half_power_freq(taps, fs, lo, hi):
    return brentq(lambda f: _gain2(taps, f, fs) - 0.5, lo, hi, xtol=1e-12)


def design_lowpass(sample_rate_hz=1000.0, target_minus3db_hz=DEFAULT_CUTOFF_HZ,
                   num_taps=DEFAULT_TAPS, search=(None, None), tol=1e-4):
    """Design a linear-phase low-pass whose -3 dB point is ``target_minus3db_hz``.

    A windowed sinc attenuates to about -6 dB at its nominal cutoff, so the
    nominal cutoff is bisected until the power gain at the target is 1/2.
    ``search`` defaults to [target, target * 22/15] (75..110 Hz for a 75 Hz
    target), clipped below Nyquist.
    """
    return _design_lowpass_cached(float(sample_rate_hz), float(target_minus3db_hz),
                                  int(num_taps), tuple(search), float(tol))


@lru_cache(maxsize=32)
def _design_lowpass_cached(fs, target, num_taps, search, tol):
    if num_taps < 3 or num_taps % 2 == 0:
        raise InvalidTapCount(f"num_taps must be odd and >= 3, got {num_taps}")
    if not 0 < target < fs / 2:
        raise CutoffOutOfRange(f"target {target} Hz not in (0, {fs / 2})")
    lo, hi = search
    lo = target if lo is None else lo
    hi = min(target * 22 / 15, 0.499 * fs) if hi is None else hi

    def excess(fc):
        return _gain2(_windowed_sinc(num_taps, fc, fs), target, fs) - 0.5

    e_lo, e_hi = excess(lo), excess(hi)
    if e_lo * e_hi > 0:
        raise CalibrationFailed(
            f"power gain at {target} Hz does not cross 1/2 for nominal cutoff in [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e_mid = excess(mid)
        if (e_mid < 0) == (e_lo < 0):
            lo, e_lo = mid, e_mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    fc = 0.5 * (lo + hi)
    taps = _windowed_sinc(num_taps, fc, fs)
    if abs(_gain2(taps, target, fs) - 0.5) > tol:
        raise CalibrationFailed(f"calibration did not converge for {target} Hz")
    realized = _half_power_freq(taps, fs, 1e-6, fs / 2 - 1e-6)
    taps.setflags(write=False)
    return FirFilter(taps=taps, kind=FilterKind.LOW_PASS, nominal_cutoff_hz=fc,
                     realized_minus3db_hz=realized, sample_rate_hz=fs)


def make_highpass_complement(low):
    """Unit impulse at the centre tap minus the low-pass taps."""
    if low.kind != FilterKind.LOW_PASS:
        raise WrongKind(f"expected a LowPass filter, got {low.kind}")
    taps = -np.asarray(low.taps, dtype=np.float64)
    taps[low.group_delay] += 1.0
    taps.setflags(write=False)
    return FirFilter(taps=taps, kind=FilterKind.HIGH_PASS_COMPLEMENT,
                     nominal_cutoff_hz=low.nominal_cutoff_hz,
                     realized_minus3db_hz=low.realized_minus3db_hz,
                     sample_rate_hz=low.sample_rate_hz)


def identity_filter(num_taps=DEFAULT_TAPS, sample_rate_hz=1000.0):
    taps = np.zeros(num_taps)
    taps[(num_taps - 1) // 2] = 1.0
    return FirFilter(taps=taps, kind=FilterKind.LOW_PASS, nominal_cutoff_hz=sample_rate_hz / 2,
                     realized_minus3db_hz=sample_rate_hz / 2, sample_rate_hz=sample_rate_hz)


def fill_gaps(x):
    """Linearly interpolate interior NaN runs, hold edge values outward."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.isnan(x)
    if not mask.any():
        return x.copy(), mask
    good = np.flatnonzero(~mask)
    if len(good) == 0:
        raise AllNaNChannel("channel contains no valid samples")
    out = x.copy()
    # np.interp holds the first/last valid value beyond the ends
    out[mask] = np.interp(np.flatnonzero(mask), good, x[good])
    return out, mask


def interpolate_gaps(rec):
    """Gap-fill both channels; return the filled recording and the original NaN mask."""
    h, mh = fill_gaps(rec.h)
    v, mv = fill_gaps(rec.v)
    return rec.with_channels(h, v), (mh, mv)


def filter_channel(x, taps):
    """Zero-phase application of a symmetric FIR to a gap-free channel.

    Reflect-pads by the group delay on both sides so the 'valid' convolution
    is already aligned with the input.
    """
    half = (len(taps) - 1) // 2
    if len(x) <= len(taps):
        raise RecordingTooShort(f"need more than {len(taps)} samples, got {len(x)}")
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, taps, mode="valid")


def apply_filter(rec, filt):
    """Interpolate -> filter -> reinsert NaN, per channel."""
    if len(rec) <= filt.num_taps:
        raise RecordingTooShort(f"need more than {filt.num_taps} samples, got {len(rec)}")
    filled, (mh, mv) = interpolate_gaps(rec)
    return _filter_filled(filled, (mh, mv), filt)


def _filter_filled(filled, masks, filt):
    h = filter_channel(filled.h, filt.taps)
    v = filter_channel(filled.v, filt.taps)
    h[masks[0]] = np.nan
    v[masks[1]] = np.nan
    return filled.with_channels(h, v)


def split_signal_noise(rec, low):
    """Low-pass ("signal") and complementary high-pass ("noise") bands of ``rec``."""
    if len(rec) <= low.num_taps:
        raise RecordingTooShort(f"need more than {low.num_taps} samples, got {len(rec)}")
    filled, masks = interpolate_gaps(rec)
    high = make_highpass_complement(low)
    return BandPair(signal=_filter_filled(filled, masks, low),
                    noise=_filter_filled(filled, masks, high),
                    raw_interpolated=filled)


def band_power_fraction(x, fs, cutoff_hz):
    """Fraction of periodogram power (DC excluded) strictly above ``cutoff_hz``."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1.0 / fs)
    total = p[1:].sum()
    if total == 0:
        return 0.0
    return float(p[f > cutoff_hz].sum() / total)
