"""Fold assignment, batching, multi-similarity loss and the training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import embedder
from .errors import (EmptyTrainingSet, HeldOutSubjectInTraining, SingleClassBatch,
                     TooFewSubjects)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    warmup_epochs: int = 30
    lr_start: float = 1e-4
    lr_peak: float = 1e-2
    lr_floor: float = 1e-7
    classes_per_batch: int = 8
    samples_per_class: int = 8
    # at most this many batches per epoch (0 = as many as the data allows)
    max_batches_per_epoch: int = 0
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_base: float = 0.5
    ms_epsilon: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    growth_channels: int = 8
    kernel_size: int = 3
    dilations: tuple = embedder.DEFAULT_DILATIONS
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.classes_per_batch < 2 or self.samples_per_class < 1:
            raise ValueError("batches need at least 2 classes")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))

    @property
    def batch_size(self):
        return self.classes_per_batch * self.samples_per_class

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if k == "dilations" else v) for k, v in d.items() if k in known})


# folds ------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    fold_of_subject: dict
    k: int = 4

    def subjects(self, fold):
        return sorted(s for s, f in self.fold_of_subject.items() if f == fold)

    def recording_totals(self, counts):
        tot = [0] * self.k
        for s, f in self.fold_of_subject.items():
            tot[f] += counts[s]
        return tot

    def counts(self):
        return [len(self.subjects(f)) for f in range(self.k)]

    def to_dict(self):
        return {"k": self.k, "fold_of_subject": dict(sorted(self.fold_of_subject.items()))}


def assign_folds(recording_counts, k=4, held_out=()):
    """Greedy balanced assignment of subjects to ``k`` folds.

    Subjects go in order of descending recording count (ties by id) to the
    fold currently holding the fewest recordings (ties by fold index).
    """
    bad = sorted(set(recording_counts) & set(held_out))
    if bad:
        raise HeldOutSubjectInTraining(f"held-out subjects passed for fold assignment: {bad}")
    if len(recording_counts) < k:
        raise TooFewSubjects(f"need at least {k} subjects, got {len(recording_counts)}")
    order = sorted(recording_counts, key=lambda s: (-recording_counts[s], s))
    totals = [0] * k
    members = [0] * k
    fold_of = {}
    for s in order:
        f = min(range(k), key=lambda i: (totals[i], i))
        fold_of[s] = f
        totals[f] += recording_counts[s]
        members[f] += 1
    return FoldAssignment(fold_of, k)


# batching ---------------------------------------------------------------------

def epoch_rng(seed, epoch):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch), 11])))


def make_batches(labels, config, epoch, seed=None):
    """Index batches of ``classes_per_batch`` subjects x ``samples_per_class`` segments.

    Each subject's segments are drawn from a shuffled queue that refills
    (reshuffled) only when exhausted, so within an epoch segments repeat only
    after all of that subject's segments were used.  Each batch takes the
    subjects with the most unused segments, ties broken by a per-epoch random
    priority.  Deterministic in (seed, epoch).
    """
    labels = np.asarray(labels)
    seed = config.seed if seed is None else seed
    rng = epoch_rng(seed, epoch)
    subjects = sorted(set(labels.tolist()))
    m, k = config.classes_per_batch, config.samples_per_class
    if len(subjects) < m:
        raise TooFewSubjects(f"need {m} subjects per batch, have {len(subjects)}")
    pools = {s: np.flatnonzero(labels == s) for s in subjects}
    queues = {s: list(rng.permutation(pools[s])) for s in subjects}
    priority = dict(zip(subjects, rng.permutation(len(subjects))))
    n_batches = max(1, len(labels) // config.batch_size)
    if config.max_batches_per_epoch:
        n_batches = min(n_batches, config.max_batches_per_epoch)
    batches = []
    for _ in range(n_batches):
        chosen = sorted(subjects, key=lambda s: (-len(queues[s]), priority[s]))[:m]
        idx = []
        for s in chosen:
            for _ in range(k):
                if not queues[s]:
                    queues[s] = list(rng.permutation(pools[s]))
                idx.append(queues[s].pop())
        batches.append(np.array(idx))
        # rotate priorities so equal-size subjects take turns
        for s in chosen:
            priority[s] += len(subjects)
    return batches


# multi-similarity loss -------------------------------------------------------------

def multi_similarity_loss(embeddings, labels, alpha=2.0, beta=50.0, base=0.5, epsilon=0.1):
    """Multi-similarity loss on cosine similarities, with pair mining.

    Returns (loss, d loss / d embeddings).  Mined pair sets are treated as
    constants when differentiating.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(e)
    if len(np.unique(labels)) < 2:
        raise SingleClassBatch("multi-similarity loss needs at least two classes")
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    u = e / norms
    S = u @ u.T
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    G = np.zeros_like(S)
    total = 0.0
    for i in range(n):
        p = np.flatnonzero(pos_mask[i])
        q = np.flatnonzero(neg_mask[i])
        if len(p) == 0 or len(q) == 0:
            continue
        sp, sn = S[i, p], S[i, q]
        keep_n = q[sn > sp.min() - epsilon]
        keep_p = p[sp < sn.max() + epsilon]
        if len(keep_p):
            z = -alpha * (S[i, keep_p] - base)
            zmax = max(z.max(), 0.0)
            ez = np.exp(z - zmax)
            denom = math.exp(-zmax) + ez.sum()
            total += (zmax + math.log(denom)) / alpha
            G[i, keep_p] += -ez / denom
        if len(keep_n):
            z = beta * (S[i, keep_n] - base)
            zmax = max(z.max(), 0.0)
            ez = np.exp(z - zmax)
            denom = math.exp(-zmax) + ez.sum()
            total += (zmax + math.log(denom)) / beta
            G[i, keep_n] += ez / denom
    loss = total / n
    G /= n
    du = (G + G.T) @ u
    de = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms
    return loss, de


# schedule ---------------------------------------------------------------------

def one_cycle_lr(step, total_steps, config):
    """Cosine ramp from lr_start to lr_peak, then cosine anneal to lr_floor.

    The peak is at step round(total_steps * warmup_epochs / epochs); the last
    step (total_steps - 1) sits exactly on lr_floor.
    """
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    peak_step = int(round(total_steps * config.warmup_epochs / config.epochs)) if config.epochs else 0
    peak_step = min(peak_step, total_steps - 1)
    if step < peak_step:
        frac = step / peak_step
        return config.lr_start + (config.lr_peak - config.lr_start) * (1 - math.cos(math.pi * frac)) / 2
    if step == peak_step:
        return config.lr_peak
    frac = (step - peak_step) / (total_steps - 1 - peak_step)
    return config.lr_floor + (config.lr_peak - config.lr_floor) * (1 + math.cos(math.pi * frac)) / 2


# optimiser --------------------------------------------------------------------

class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a, dtype=np.float64) for a in params.arrays()]
        self.v = [np.zeros_like(a, dtype=np.float64) for a in params.arrays()]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for a, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            g = g.astype(np.float64)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(a.dtype)


# training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    params: object
    log: list = field(default_factory=list)
    fold_id: int = 0


def config_digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def validation_loss(params, x, labels, config):
    """MS loss of the whole validation set under frozen weights."""
    if len(x) == 0 or len(np.unique(labels)) < 2:
        return float("nan")
    emb = embedder.embed_batch(params, x)
    loss, _ = multi_similarity_loss(emb, labels, config.ms_alpha, config.ms_beta,
                                    config.ms_base, config.ms_epsilon)
    return float(loss)


def train(fold_id, train_x, train_labels, config, val_x=None, val_labels=None, on_epoch=None):
    """Train one fold model on (n, 2, T) segments with subject labels.

    ``fold_id`` enters the initialisation seed so the four fold models
    differ even when trained on overlapping data.
    """
    train_x = np.asarray(train_x)
    train_labels = np.asarray(train_labels)
    if len(train_x) == 0:
        raise EmptyTrainingSet("no training segments")
    dtype = np.dtype(config.dtype)
    params = embedder.init_params(seed=config.seed * 16 + fold_id, growth=config.growth_channels,
                                  num_layers=len(config.dilations), kernel_size=config.kernel_size,
                                  dilations=config.dilations, dtype=dtype)
    opt = Adam(params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    per_epoch = [make_batches(train_labels, config, epoch, seed=config.seed * 16 + fold_id)
                 for epoch in range(config.epochs)]
    total_steps = sum(len(b) for b in per_epoch)
    step = 0
    history = []
    for epoch, batches in enumerate(per_epoch):
        losses = []
        lr = None
        for idx in batches:
            lr = one_cycle_lr(step, total_steps, config)
            xb = train_x[idx].astype(dtype, copy=False)
            emb, cache = embedder.forward(params, xb)
            loss, de = multi_similarity_loss(emb, train_labels[idx], config.ms_alpha,
                                             config.ms_beta, config.ms_base, config.ms_epsilon)
            grads = embedder.backward(params, cache, de)
            opt.step(params, grads, lr)
            losses.append(loss)
            step += 1
        val = float("nan")
        if val_x is not None and len(val_x):
            val = validation_loss(params, val_x, val_labels, config)
        entry = {"fold": fold_id, "epoch": epoch, "lr": lr,
                 "train_loss": float(np.mean(losses)), "val_loss": val}
        history.append(entry)
        log.debug("fold %d epoch %d train %.5f val %.5f", fold_id, epoch,
                  entry["train_loss"], val)
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(params=params, log=history, fold_id=fold_id)
