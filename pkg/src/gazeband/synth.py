"""Deterministic synthetic reading-task corpora with per-subject signatures.

Each subject carries low-band traits (saccade velocity gain, fixation drift,
reading rhythm) and a high-band trait (a narrow-band tremor component above
75 Hz).  Every draw comes from numpy's PCG64 generator seeded through
``SeedSequence``, so output depends only on the seeds, not the platform.

Session-to-session variability is modelled by perturbing the profile with
the session jitter seed before simulating; the perturbation scales below are
what set how hard each band is to match across sessions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import InvalidDuration
from .ingest import GAZEBASE_BOUNDS, GazeRecording, Task, recording_path, save_recording

SAMPLE_RATE_HZ = 1000.0

# Parameter ranges for make_profile, (low, high), drawn uniformly.
SACCADE_GAIN_RANGE = (0.6, 1.6)
DRIFT_STD_RANGE = (0.1, 1.0)            # dva / sqrt(s)
TREMOR_CENTER_RANGE = (120.0, 250.0)    # Hz
TREMOR_STD_RANGE = (0.008, 0.02)        # dva; tremor_power is its square
BLINK_RATE_RANGE = (0.05, 0.3)          # Hz
READING_SPEED_RANGE = (2.5, 5.0)        # saccades / s
SACCADE_AMP_RANGE = (1.5, 3.5)          # dva, mean forward reading saccade

# Session-level perturbation (relative std unless noted).
SESSION_JITTER = {
    "saccade_amp_gain": 0.03,
    "fixation_drift_std": 0.08,
    "reading_speed": 0.05,
    "mean_saccade_amp": 0.04,
    "tremor_power": 0.5,
    "tremor_center_hz": 15.0,  # absolute, Hz
}

TREMOR_BANDWIDTH_HZ = 50.0
# drift increments are smoothed below this frequency so drift lives in the low band
DRIFT_SMOOTH_HZ = 20.0
BLINK_DURATION_MS = (50, 150)
LINE_LEFT, LINE_RIGHT = -15.0, 15.0
TOP_LINE, BOTTOM_LINE, LINE_SPACING = 8.0, -12.0, 1.6


@dataclass(frozen=True)
class SubjectProfile:
    seed: int
    saccade_amp_gain: float
    fixation_drift_std: float
    tremor_center_hz: float
    tremor_power: float
    blink_rate_hz: float
    reading_speed: float
    mean_saccade_amp: float = 2.5

    def __post_init__(self):
        if not self.tremor_center_hz > 75:
            raise ValueError("tremor_center_hz must exceed 75 Hz")
        for name in ("fixation_drift_std", "tremor_power", "blink_rate_hz",
                     "reading_speed", "saccade_amp_gain", "mean_saccade_amp"):
            x = getattr(self, name)
            if not (np.isfinite(x) and x >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {x}")

    def to_dict(self):
        return asdict(self)


def _generator(*entropy):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def make_profile(subject_index, master_seed):
    rng = _generator(int(master_seed) & (2**64 - 1), int(subject_index))
    u = rng.random(7)

    def draw(r, x):
        return float(r[0] + (r[1] - r[0]) * x)

    tremor_std = draw(TREMOR_STD_RANGE, u[3])
    return SubjectProfile(
        seed=int(rng.integers(0, 2**63)),
        saccade_amp_gain=draw(SACCADE_GAIN_RANGE, u[0]),
        fixation_drift_std=draw(DRIFT_STD_RANGE, u[1]),
        tremor_center_hz=draw(TREMOR_CENTER_RANGE, u[2]),
        tremor_power=tremor_std ** 2,
        blink_rate_hz=draw(BLINK_RATE_RANGE, u[4]),
        reading_speed=draw(READING_SPEED_RANGE, u[5]),
        mean_saccade_amp=draw(SACCADE_AMP_RANGE, u[6]),
    )


def session_profile(profile, session_jitter_seed, scale=1.0):
    """Profile as expressed in one session: traits perturbed around the subject's."""
    if scale == 0:
        return profile
    rng = _generator(profile.seed, int(session_jitter_seed), 1)
    z = rng.standard_normal(6) * scale
    j = SESSION_JITTER
    lo, hi = TREMOR_CENTER_RANGE[0] - 30.0, 300.0
    return replace(
        profile,
        saccade_amp_gain=profile.saccade_amp_gain * float(np.exp(j["saccade_amp_gain"] * z[0])),
        fixation_drift_std=profile.fixation_drift_std * float(np.exp(j["fixation_drift_std"] * z[1])),
        reading_speed=profile.reading_speed * float(np.exp(j["reading_speed"] * z[2])),
        mean_saccade_amp=profile.mean_saccade_amp * float(np.exp(j["mean_saccade_amp"] * z[3])),
        tremor_power=profile.tremor_power * float(np.exp(j["tremor_power"] * z[4])),
        tremor_center_hz=float(np.clip(profile.tremor_center_hz + j["tremor_center_hz"] * z[5], lo, hi)),
    )


@dataclass(frozen=True, eq=False)
class SynthTrace:
    """Components of one simulated recording, before and after mixing."""

    gaze_h: np.ndarray          # saccades + drift, no tremor, no blinks
    gaze_v: np.ndarray
    tremor_h: np.ndarray
    tremor_v: np.ndarray
    blink_mask: np.ndarray
    saccade_amplitudes: np.ndarray
    saccade_peak_velocities: np.ndarray
    expressed: SubjectProfile

    @property
    def h(self):
        out = self.gaze_h + self.tremor_h
        out[self.blink_mask] = np.nan
        return out

    @property
    def v(self):
        out = self.gaze_v + self.tremor_v
        out[self.blink_mask] = np.nan
        return out


def tremor_series(rng, n, center_hz, power, fs=SAMPLE_RATE_HZ):
    """White noise through a 4th-order band-pass, scaled to variance ``power``."""
    if power == 0:
        return np.zeros(n)
    lo = max(center_hz - TREMOR_BANDWIDTH_HZ / 2, 1.0)
    hi = min(center_hz + TREMOR_BANDWIDTH_HZ / 2, 0.49 * fs)
    sos = sps.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    warm = 2000
    x = sps.sosfilt(sos, rng.standard_normal(n + warm))[warm:]
    return x * np.sqrt(power / np.var(x))


def _raised_cosine_step(n):
    """Normalised position profile of a raised-cosine velocity pulse."""
    t = (np.arange(1, n + 1)) / n
    return t - np.sin(2 * np.pi * t) / (2 * np.pi)


def _reading_path(rng, n, prof, fs):
    """Fixation/saccade position trace of line-by-line reading."""
    h = np.empty(n)
    v = np.empty(n)
    amps, peaks = [], []
    x, y = LINE_LEFT, TOP_LINE
    dt = 1.0 / fs
    i = 0
    mean_fix = 1.0 / max(prof.reading_speed, 1e-3)
    smooth = sps.butter(2, DRIFT_SMOOTH_HZ, fs=fs, output="sos")
    while i < n:
        # Brownian drift; the unit-DC-gain smoothing keeps the diffusion rate
        # on time scales above ~50 ms
        dur = max(int(round(rng.gamma(4.0, mean_fix / 4.0) * fs)), 40)
        dur = min(dur, n - i)
        white = rng.standard_normal((2, dur))
        steps = sps.sosfilt(smooth, white, axis=1) * (prof.fixation_drift_std * np.sqrt(dt))
        h[i:i + dur] = x + np.cumsum(steps[0])
        v[i:i + dur] = y + np.cumsum(steps[1])
        x, y = h[i + dur - 1], v[i + dur - 1]
        i += dur
        if i >= n:
            break
        # next target: forward reading saccade or return sweep
        if x > LINE_RIGHT:
            tx = LINE_LEFT + rng.normal(0, 0.5)
            ty = y - LINE_SPACING
            if ty < BOTTOM_LINE:
                ty = TOP_LINE
        else:
            tx = x + prof.mean_saccade_amp * rng.gamma(6.0, 1 / 6.0)
            ty = y + rng.normal(0, 0.15)
        dx, dy = tx - x, ty - y
        amp = float(np.hypot(dx, dy))
        if amp < 0.05:
            continue
        peak = prof.saccade_amp_gain * 55.0 * amp ** 0.6
        # a raised-cosine pulse covering `amp` at peak velocity `peak` lasts 2*amp/peak
        nsac = max(int(round(2 * amp / peak * fs)), 3)
        nsac = min(nsac, n - i)
        prog = _raised_cosine_step(max(nsac, 1))[:nsac]
        h[i:i + nsac] = x + dx * prog
        v[i:i + nsac] = y + dy * prog
        amps.append(amp)
        peaks.append(peak)
        x, y = h[i + nsac - 1], v[i + nsac - 1]
        i += nsac
    return h, v, np.array(amps), np.array(peaks)


def _blinks(rng, n, rate_hz, fs):
    mask = np.zeros(n, dtype=bool)
    if rate_hz <= 0:
        return mask
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate_hz)
        start = int(t * fs)
        if start >= n:
            break
        width = int(rng.integers(BLINK_DURATION_MS[0], BLINK_DURATION_MS[1] + 1) * fs / 1000)
        mask[start:start + width] = True
        t += width / fs
    return mask


def synthesize(profile, duration_s, session_jitter_seed, fs=SAMPLE_RATE_HZ, jitter_scale=1.0):
    if not duration_s > 0:
        raise InvalidDuration(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * fs))
    prof = session_profile(profile, session_jitter_seed, jitter_scale)
    root = np.random.SeedSequence([profile.seed, int(session_jitter_seed)])
    r_path, r_trem, r_blink = (np.random.Generator(np.random.PCG64(s)) for s in root.spawn(3))
    h, v, amps, peaks = _reading_path(r_path, n, prof, fs)
    b = GAZEBASE_BOUNDS
    margin = 0.5
    h = np.clip(h, b.h_min + margin, b.h_max - margin)
    v = np.clip(v, b.v_min + margin, b.v_max - margin)
    th = tremor_series(r_trem, n, prof.tremor_center_hz, prof.tremor_power, fs)
    tv = tremor_series(r_trem, n, prof.tremor_center_hz, prof.tremor_power, fs)
    blink = _blinks(r_blink, n, prof.blink_rate_hz, fs)
    return SynthTrace(gaze_h=h, gaze_v=v, tremor_h=th, tremor_v=tv, blink_mask=blink,
                      saccade_amplitudes=amps, saccade_peak_velocities=peaks, expressed=prof)


def generate_recording(profile, duration_s, session_jitter_seed, subject_id="000",
                       round_id=1, session_id=1, task=Task.TEX, jitter_scale=1.0):
    """Simulated 1000 Hz reading recording for one subject and session."""
    tr = synthesize(profile, duration_s, session_jitter_seed, jitter_scale=jitter_scale)
    n = len(tr.gaze_h)
    return GazeRecording(subject_id=subject_id, round_id=round_id, session_id=session_id,
                         task=task, h=tr.h, v=tr.v, sample_rate_hz=SAMPLE_RATE_HZ,
                         timestamps=np.arange(n, dtype=np.float64))


@dataclass(frozen=True)
class CorpusSpec:
    """Layout of a synthetic corpus.

    Held-out subjects supply round-1 sessions 1 and 2 (and round-6 session 2
    when ``long_term``); training subjects supply round-1 sessions 1 and 2.
    """

    n_heldout: int = 20
    n_train: int = 16
    heldout_duration_s: float = 90.0
    train_duration_s: float = 60.0
    master_seed: int = 20240501
    long_term: bool = False
    # round-6 sessions are a year later: larger trait drift
    long_term_jitter_scale: float = 2.0

    def to_dict(self):
        return asdict(self)


def subject_id(index):
    return f"{index + 1:03d}"


def jitter_seed(master_seed, subject_index, round_id, session_id):
    return int(np.random.SeedSequence([master_seed, subject_index, round_id, session_id])
               .generate_state(2, np.uint64)[0])


def corpus_plan(spec):
    """List of (subject_index, round, session, duration, jitter_scale, held_out)."""
    plan = []
    for i in range(spec.n_heldout + spec.n_train):
        held = i < spec.n_heldout
        dur = spec.heldout_duration_s if held else spec.train_duration_s
        plan.append((i, 1, 1, dur, 1.0, held))
        plan.append((i, 1, 2, dur, 1.0, held))
        if held and spec.long_term:
            plan.append((i, 6, 2, dur, spec.long_term_jitter_scale, held))
    return plan


def generate_corpus(spec):
    """Yield (GazeRecording, held_out) for every planned recording, in plan order."""
    profiles = {}
    for i, rnd, ses, dur, scale, held in corpus_plan(spec):
        if i not in profiles:
            profiles[i] = make_profile(i, spec.master_seed)
        rec = generate_recording(profiles[i], dur, jitter_seed(spec.master_seed, i, rnd, ses),
                                 subject_id=subject_id(i), round_id=rnd, session_id=ses,
                                 task=Task.TEX, jitter_scale=scale)
        yield rec, held


def manifest(spec):
    subjects = []
    for i in range(spec.n_heldout + spec.n_train):
        p = make_profile(i, spec.master_seed)
        subjects.append({"subject_id": subject_id(i), "index": i,
                         "held_out": i < spec.n_heldout, "profile": p.to_dict()})
    recordings = [{"subject_id": subject_id(i), "round": rnd, "session": ses,
                   "task": Task.TEX.value, "duration_s": dur,
                   "jitter_seed": jitter_seed(spec.master_seed, i, rnd, ses),
                   "jitter_scale": scale}
                  for i, rnd, ses, dur, scale, held in corpus_plan(spec)]
    return {"spec": spec.to_dict(), "sample_rate_hz": SAMPLE_RATE_HZ,
            "subjects": subjects, "recordings": recordings}


def write_corpus(spec, root):
    """Write CSVs in the ingest directory convention plus ``manifest.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for rec, _ in generate_corpus(spec):
        save_recording(rec, recording_path(root, rec.subject_id, rec.round_id,
                                           rec.session_id, rec.task))
    (root / "manifest.json").write_text(json.dumps(manifest(spec), indent=2, sort_keys=True))
    return root


def read_manifest(root):
    p = Path(root) / "manifest.json"
    if not p.exists():
        return None
    return json.loads(p.read_text())
