"""Verification scoring and metrics: ROC, EER, d', FRR at a fixed FAR.

Threshold semantics everywhere: a probe is accepted iff score >= threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateDistributions, EmptyScores, InsufficientDuration, MissingSession

WINDOWS_PER_TEMPLATE = 12
TERMS = {
    # term -> (enrollment (round, session), authentication (round, session))
    "short": ((1, 1), (1, 2)),
    "long": ((1, 1), (6, 2)),
}


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray               # (N,) scores
    impostor: np.ndarray              # (M,) scores
    genuine_subjects: tuple = ()
    impostor_pairs: tuple = ()        # (enroll_subject, probe_subject) per impostor score

    def __post_init__(self):
        object.__setattr__(self, "genuine", np.asarray(self.genuine, dtype=np.float64))
        object.__setattr__(self, "impostor", np.asarray(self.impostor, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray    # descending, +inf first, -inf last
    far: np.ndarray
    frr: np.ndarray


@dataclass(frozen=True)
class BiometricReport:
    band: str
    term: str
    eer_pct: float
    d_prime: float
    frr_at_far_pct: float
    frr_std_pct: float
    target_far: float
    n_genuine: int
    n_impostor: int
    far_resolution_warning: bool

    def to_dict(self):
        return asdict(self)


# set construction -------------------------------------------------------------

def template_windows(segments_by_key, subject, round_id, session_id, task="TEX",
                     n_windows=WINDOWS_PER_TEMPLATE):
    """First ``n_windows`` 5 s windows of one recording, in window order."""
    key = (subject, round_id, session_id, task)
    if key not in segments_by_key:
        raise MissingSession(subject, f"no round {round_id} session {session_id} {task} recording")
    segs = sorted(segments_by_key[key], key=lambda s: s.window_index)
    if len(segs) < n_windows:
        raise InsufficientDuration(subject, f"{len(segs)} windows < {n_windows} required")
    return segs[:n_windows]


def build_eval_sets(segments_by_key, subjects, term, embed_fn, task="TEX",
                    n_windows=WINDOWS_PER_TEMPLATE):
    """Enrollment and authentication centroids, one row per subject.

    ``embed_fn`` maps an (n, 2, T) array to (n, dim) embeddings.
    """
    from .embedder import centroid
    from .features import stack_segments

    (er, es), (ar, as_) = TERMS[term]
    enroll, auth = [], []
    for s in subjects:
        e = template_windows(segments_by_key, s, er, es, task, n_windows)
        a = template_windows(segments_by_key, s, ar, as_, task, n_windows)
        enroll.append(centroid(embed_fn(stack_segments(e))))
        auth.append(centroid(embed_fn(stack_segments(a))))
    return np.array(enroll), np.array(auth)


# scoring ----------------------------------------------------------------------

def cosine_matrix(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    return (a / np.maximum(na, 1e-300)) @ (b / np.maximum(nb, 1e-300)).T


def score_all(enroll, auth, subjects=None):
    """Cosine similarity of every enrollment/probe pair; diagonal is genuine."""
    S = cosine_matrix(enroll, auth)
    n = len(S)
    if subjects is None:
        subjects = [str(i) for i in range(n)]
    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off)
    return ScoreSet(genuine=np.diag(S).copy(), impostor=S[off],
                    genuine_subjects=tuple(subjects),
                    impostor_pairs=tuple((subjects[i], subjects[j]) for i, j in zip(ii, jj)))


# metrics ----------------------------------------------------------------------

def compute_roc(scores):
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    if len(g) == 0 or len(i) == 0:
        raise EmptyScores("need genuine and impostor scores")
    distinct = np.unique(np.concatenate([g, i]))[::-1]
    thr = np.concatenate([[np.inf], distinct, [-np.inf]])
    # accepted impostors: score >= t; rejected genuine: score < t
    far = (len(i) - np.searchsorted(i, thr, side="left")) / len(i)
    frr = np.searchsorted(g, thr, side="left") / len(g)
    return RocCurve(thresholds=thr, far=far, frr=frr)


def eer(roc):
    """Equal error rate in percent, linearly interpolated at the FAR/FRR crossing."""
    diff = roc.far - roc.frr
    j = int(np.argmax(diff >= 0))
    if diff[j] == 0:
        return 100.0 * float(roc.far[j])
    d0, d1 = diff[j - 1], diff[j]
    w = d0 / (d0 - d1)
    return 100.0 * float(roc.far[j - 1] + w * (roc.far[j] - roc.far[j - 1]))


def d_prime(scores):
    g, i = scores.genuine, scores.impostor
    if len(g) < 2 or len(i) < 2:
        raise DegenerateDistributions("need at least two genuine and two impostor scores")
    sg = np.std(g, ddof=1)
    si = np.std(i, ddof=1)
    denom = math.sqrt((sg ** 2 + si ** 2) / 2)
    if denom == 0:
        raise DegenerateDistributions("both score distributions have zero spread")
    return abs(float(np.mean(g)) - float(np.mean(i))) / denom


def frr_at_far_point(roc, target_far):
    """FRR (fraction) at the lowest threshold whose FAR does not exceed the target."""
    ok = np.flatnonzero(roc.far <= target_far)
    return float(roc.frr[ok[-1]])


def _bootstrap_scores(S, subjects_idx):
    sub = S[np.ix_(subjects_idx, subjects_idx)]
    same = subjects_idx[:, None] == subjects_idx[None, :]
    m = len(subjects_idx)
    diag = np.eye(m, dtype=bool)
    # repeated draws of one subject compare genuinely, never as impostors
    return ScoreSet(genuine=sub[diag], impostor=sub[~same])


def frr_at_far(scores, target_far=1e-4, score_matrix=None, resamples=1000, seed=0):
    """(FRR %, bootstrap std %) at ``target_far``.

    The spread resamples subjects with replacement from ``score_matrix``
    (enrollment x probe cosine scores); without it the std is NaN.
    """
    if len(scores.genuine) == 0 or len(scores.impostor) == 0:
        raise EmptyScores("need genuine and impostor scores")
    if len(scores.impostor) < 1.0 / target_far:
        warnings.warn(f"{len(scores.impostor)} impostor scores cannot resolve FAR {target_far:g}; "
                      "the operating point is the zero-FAR threshold", RuntimeWarning, stacklevel=2)
    frr = frr_at_far_point(compute_roc(scores), target_far)
    std = float("nan")
    if score_matrix is not None and resamples > 0:
        S = np.asarray(score_matrix)
        n = len(S)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 3])))
        vals = []
        for _ in range(resamples):
            idx = rng.integers(0, n, n)
            bs = _bootstrap_scores(S, idx)
            if len(bs.impostor) == 0:
                continue
            vals.append(frr_at_far_point(compute_roc(bs), target_far))
        if len(vals) > 1:
            std = float(np.std(vals, ddof=1))
    return 100.0 * frr, 100.0 * std


def far_resolution_insufficient(n_impostor, target_far):
    return n_impostor < 1.0 / target_far


def evaluate_centroids(enroll, auth, band, term, target_far=1e-4, resamples=1000, seed=0,
                       subjects=None):
    S = cosine_matrix(enroll, auth)
    scores = score_all(enroll, auth, subjects)
    roc = compute_roc(scores)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        frr, std = frr_at_far(scores, target_far, S, resamples, seed)
    report = BiometricReport(
        band=band, term=term, eer_pct=eer(roc), d_prime=d_prime(scores),
        frr_at_far_pct=frr, frr_std_pct=std, target_far=target_far,
        n_genuine=len(scores.genuine), n_impostor=len(scores.impostor),
        far_resolution_warning=far_resolution_insufficient(len(scores.impostor), target_far))
    return report, scores, roc


def shuffled_label_eer(enroll, auth, shuffles=200, seed=0):
    """Mean EER (%) after randomly re-pairing probes with enrollment identities.

    Each shuffle draws a random permutation of probe labels, so "genuine"
    pairs no longer share an identity; averaged over shuffles this is the
    chance-level control.
    """
    S = cosine_matrix(enroll, auth)
    n = len(S)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 5])))
    vals = []
    for _ in range(shuffles):
        perm = rng.permutation(n)
        P = S[:, perm]
        is_gen = np.zeros((n, n), dtype=bool)
        is_gen[np.arange(n), np.arange(n)] = True
        vals.append(eer(compute_roc(ScoreSet(genuine=P[is_gen], impostor=P[~is_gen]))))
    return float(np.mean(vals))


TABLE_ROWS = (("EER (%) ↓", "eer_pct"), ("d-prime ↑", "d_prime"),
              ("FRR @ FAR (STD) (%) ↓", "frr"))


def render_table(reports):
    """Plain-text results table: metric rows x (term, band) columns."""
    bands = ["signal", "noise", "unfiltered"]
    cols = [(t, b) for t in ("short", "long") for b in bands
            if any(r.band == b and r.term == t for r in reports)]
    by = {(r.term, r.band): r for r in reports}
    header = ["Metrics"] + [f"{t}-term {b}" for t, b in cols]
    rows = []
    for label, attr in TABLE_ROWS:
        row = [label]
        for c in cols:
            r = by[c]
            if attr == "frr":
                row.append(f"{r.frr_at_far_pct:.2f} ({r.frr_std_pct:.2f})")
            else:
                row.append(f"{getattr(r, attr):.2f}")
        rows.append(row)
    widths = [max(len(x[i]) for x in [header] + rows) for i in range(len(header))]
    fmt = " | ".join("{:<%d}" % w for w in widths)
    lines = [fmt.format(*header), "-+-".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"
