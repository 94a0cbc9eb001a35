"""Loading, validating and addressing GazeBase-style gaze recordings."""

from __future__ import annotations

import csv
import enum
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyRecording, InvalidBounds, MalformedRow, MissingColumn


class Task(str, enum.Enum):
    HSS = "HSS"
    FXS = "FXS"
    RAN = "RAN"
    TEX = "TEX"
    VD1 = "VD1"
    VD2 = "VD2"
    BLG = "BLG"


@dataclass(frozen=True)
class ScreenBounds:
    h_min: float = -23.3
    h_max: float = 23.3
    v_min: float = -18.5
    v_max: float = 11.7

    def __post_init__(self):
        if not (self.h_min < self.h_max and self.v_min < self.v_max):
            raise InvalidBounds(f"invalid bounds {self}")


GAZEBASE_BOUNDS = ScreenBounds()


@dataclass(frozen=True, eq=False)
class GazeRecording:
    """Two-channel gaze position series in degrees of visual angle.

    ``h`` and ``v`` are float64 arrays of equal length; NaN marks samples the
    tracker could not estimate (blinks) or that were clipped off-screen.
    """

    subject_id: str
    round_id: int
    session_id: int
    task: Task
    h: np.ndarray
    v: np.ndarray
    sample_rate_hz: float = 1000.0
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if h.ndim != 1 or h.shape != v.shape:
            raise ValueError("h and v must be 1-D and of equal length")
        if len(h) == 0:
            raise EmptyRecording("recording has no samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "task", Task(self.task))

    def __len__(self):
        return len(self.h)

    @property
    def duration_s(self):
        return len(self.h) / self.sample_rate_hz

    @property
    def key(self):
        return (self.subject_id, self.round_id, self.session_id, self.task.value)

    def with_channels(self, h, v):
        return replace(self, h=h, v=v)

    def nan_mask(self):
        return np.isnan(self.h) | np.isnan(self.v)


def _to_float(cell):
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _check_monotone(t):
    finite = np.flatnonzero(np.isfinite(t))
    if len(finite) > 1:
        back = np.flatnonzero(np.diff(t[finite]) < 0)
        if len(back):
            raise MalformedRow(int(finite[back[0] + 1]) + 2, "timestamp decreases")


def _load_numeric(path, columns):
    """Fast path for well-formed all-numeric files; None means use the careful reader."""
    try:
        with open(path, encoding="utf-8") as fh:
            header = [c.strip() for c in fh.readline().split(",")]
            if not all(c in header for c in columns):
                return None
            cols = [header.index(c) for c in columns]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    except (ValueError, OSError, UnicodeDecodeError):
        return None
    if data.shape[0] == 0 or data.shape[1] != len(header):
        return None
    return tuple(np.ascontiguousarray(data[:, c]) for c in cols)


def load_recording(path, subject_id, round_id, session_id, task,
                   columns=("n", "x", "y"), sample_rate_hz=1000.0):
    """Read one recording from a CSV file with a header row.

    ``columns`` names the timestamp, horizontal and vertical columns; other
    columns are ignored.  Empty or non-numeric cells become NaN.
    """
    fast = _load_numeric(path, columns)
    if fast is not None:
        t, h, v = fast
        _check_monotone(t)
        return GazeRecording(subject_id=str(subject_id), round_id=int(round_id),
                             session_id=int(session_id), task=Task(task), h=h, v=v,
                             sample_rate_hz=float(sample_rate_hz), timestamps=t)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise EmptyRecording(f"{path}: file is empty") from None
        for name in columns:
            if name not in header:
                raise MissingColumn(f"{path}: column {name!r} not in header {header}")
        it, ih, iv = (header.index(c) for c in columns)
        width = len(header)
        ts, hs, vs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise MalformedRow(lineno, f"expected {width} fields, got {len(row)}")
            ts.append(_to_float(row[it]))
            hs.append(_to_float(row[ih]))
            vs.append(_to_float(row[iv]))
    if not hs:
        raise EmptyRecording(f"{path}: no data rows")
    t = np.array(ts)
    _check_monotone(t)
    return GazeRecording(subject_id=str(subject_id), round_id=int(round_id),
                         session_id=int(session_id), task=Task(task),
                         h=np.array(hs), v=np.array(vs),
                         sample_rate_hz=float(sample_rate_hz), timestamps=t)


def save_recording(rec, path, columns=("n", "x", "y")):
    """Write ``rec`` so that :func:`load_recording` reproduces it exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if rec.timestamps is not None:
        t = rec.timestamps
    else:
        t = np.arange(len(rec)) * (1000.0 / rec.sample_rate_hz)
    # repr round-trips float64 exactly; NaN is written as "NaN"
    cells = [[("NaN" if x != x else repr(x)) for x in a.tolist()] for a in (t, rec.h, rec.v)]
    body = "\n".join(map(",".join, zip(*cells)))
    path.write_text(",".join(columns) + "\n" + body + "\n", encoding="utf-8")
    return path


def clip_offscreen(rec, bounds=GAZEBASE_BOUNDS):
    """Set both channels to NaN wherever either lies outside ``bounds``."""
    h, v = rec.h, rec.v
    with np.errstate(invalid="ignore"):
        off = ((h < bounds.h_min) | (h > bounds.h_max)
               | (v < bounds.v_min) | (v > bounds.v_max))
    if not off.any():
        return rec
    h = h.copy()
    v = v.copy()
    h[off] = np.nan
    v[off] = np.nan
    return rec.with_channels(h, v)


# <root>/round_<R>/S_<subject>_S<session>_<TASK>.csv
DEFAULT_GLOB = "round_*/S_*_S*_*.csv"
_NAME_RE = re.compile(r"^S_(?P<subject>[^_]+)_S(?P<session>\d+)_(?P<task>[A-Z0-9]+)\.csv$")
_ROUND_RE = re.compile(r"^round_(?P<round>\d+)$")


def recording_path(root, subject_id, round_id, session_id, task):
    task = Task(task).value
    return Path(root) / f"round_{round_id}" / f"S_{subject_id}_S{session_id}_{task}.csv"


def parse_recording_path(path):
    """Return (subject_id, round_id, session_id, task) encoded in a corpus path."""
    path = Path(path)
    m = _NAME_RE.match(path.name)
    r = _ROUND_RE.match(path.parent.name)
    if not m or not r:
        raise ValueError(f"{path} does not follow the corpus naming convention")
    return m["subject"], int(r["round"]), int(m["session"]), Task(m["task"])


def discover(root, pattern=DEFAULT_GLOB):
    """Map (subject, round, session, task) -> path for every file under ``root``."""
    found = {}
    for p in sorted(Path(root).glob(pattern)):
        try:
            key = parse_recording_path(p)
        except ValueError:
            continue
        found[(key[0], key[1], key[2], key[3].value)] = p
    return found


def load_corpus(root, pattern=DEFAULT_GLOB, bounds=GAZEBASE_BOUNDS, tasks=None,
                columns=("n", "x", "y"), sample_rate_hz=1000.0):
    """Load and clip every recording under ``root``, keyed like :func:`discover`."""
    out = {}
    for key, path in discover(root, pattern).items():
        if tasks is not None and key[3] not in tasks:
            continue
        rec = load_recording(path, *key, columns=columns, sample_rate_hz=sample_rate_hz)
        out[key] = clip_offscreen(rec, bounds)
    return out
