"""Segment embedders: dense dilated 1-D CNN, handcrafted baseline, ensembling.

The network follows the dense-connectivity pattern: every convolution sees
the input plus all earlier feature maps, the full concatenated map is
averaged over time and projected to 128 dimensions.  Forward and backward
passes are written out by hand on top of :mod:`gazeband.kernels`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import HashMismatch, ShapeMismatch

EMBEDDING_DIM = 128
DEFAULT_DILATIONS = (1, 2, 4, 8, 16, 32, 64, 1)


@dataclass(eq=False)
class ConvEmbedderParams:
    conv_w: list            # layer k: (growth, in_channels + growth * k, kernel_size)
    conv_b: list            # layer k: (growth,)
    fc_w: np.ndarray        # (output_dim, in_channels + growth * num_layers)
    fc_b: np.ndarray        # (output_dim,)
    dilations: tuple = DEFAULT_DILATIONS
    in_channels: int = 2

    @property
    def num_conv_layers(self):
        return len(self.conv_w)

    @property
    def growth_channels(self):
        return self.conv_w[0].shape[0]

    @property
    def kernel_size(self):
        return self.conv_w[0].shape[2]

    @property
    def output_dim(self):
        return self.fc_w.shape[0]

    @property
    def total_channels(self):
        return self.in_channels + self.growth_channels * self.num_conv_layers

    @property
    def dtype(self):
        return self.fc_w.dtype

    def arrays(self):
        """Parameter arrays in canonical order."""
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out += [w, b]
        return out + [self.fc_w, self.fc_b]

    def num_parameters(self):
        return sum(a.size for a in self.arrays())

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def like(self, arrays):
        """New params with this structure and the given arrays (canonical order)."""
        arrays = list(arrays)
        n = self.num_conv_layers
        return ConvEmbedderParams(conv_w=arrays[0:2 * n:2], conv_b=arrays[1:2 * n:2],
                                  fc_w=arrays[2 * n], fc_b=arrays[2 * n + 1],
                                  dilations=tuple(self.dilations), in_channels=self.in_channels)

    def from_flat(self, vec):
        vec = np.asarray(vec)
        out, i = [], 0
        for a in self.arrays():
            out.append(vec[i:i + a.size].reshape(a.shape).astype(a.dtype, copy=True))
            i += a.size
        return self.like(out)

    def zeros_like(self):
        return self.like([np.zeros_like(a) for a in self.arrays()])

    def astype(self, dtype):
        return self.like([a.astype(dtype) for a in self.arrays()])

    def copy(self):
        return self.like([a.copy() for a in self.arrays()])

    def digest(self):
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()


def init_params(seed, growth=8, num_layers=8, kernel_size=3, dilations=DEFAULT_DILATIONS,
                in_channels=2, output_dim=EMBEDDING_DIM, dtype=np.float32):
    """He-normal convolutions, zero biases, uniform fully-connected layer."""
    if len(dilations) != num_layers:
        raise ValueError("need one dilation per layer")
    if kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
    conv_w, conv_b = [], []
    for k in range(num_layers):
        cin = in_channels + growth * k
        std = np.sqrt(2.0 / (cin * kernel_size))
        conv_w.append((rng.standard_normal((growth, cin, kernel_size)) * std).astype(dtype))
        conv_b.append(np.zeros(growth, dtype=dtype))
    total = in_channels + growth * num_layers
    bound = 1.0 / np.sqrt(total)
    fc_w = rng.uniform(-bound, bound, size=(output_dim, total)).astype(dtype)
    fc_b = rng.uniform(-bound, bound, size=output_dim).astype(dtype)
    return ConvEmbedderParams(conv_w, conv_b, fc_w, fc_b, tuple(int(d) for d in dilations),
                              in_channels)


def _as_batch(x, params):
    if hasattr(x, "vh"):
        x = x.as_array()
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != params.in_channels:
        raise ShapeMismatch(f"expected (batch, {params.in_channels}, time), got {x.shape}")
    return x


def _is_single(seg):
    return hasattr(seg, "vh") or np.ndim(seg) == 2


@dataclass(eq=False)
class ForwardCache:
    buf: np.ndarray                # (batch, total_channels, time) activations
    pooled: np.ndarray             # (batch, total_channels)


def forward(params, x):
    """Batched forward pass; returns ((batch, output_dim) embeddings, cache)."""
    x = _as_batch(x, params)
    dtype = params.dtype
    B, cin, T = x.shape
    buf = np.zeros((B, params.total_channels, T), dtype=dtype)
    buf[:, :cin] = x
    for w, b, d in zip(params.conv_w, params.conv_b, params.dilations):
        if w.shape[1] != cin:
            raise ShapeMismatch(f"layer expects {w.shape[1]} input channels, buffer has {cin}")
        kernels.dense_layer_forward(buf, cin, w, b, int(d))
        cin += w.shape[0]
    pooled = buf.mean(axis=2, dtype=np.float64).astype(dtype)
    emb = pooled @ params.fc_w.T + params.fc_b
    return emb, ForwardCache(buf, pooled)


def backward(params, cache, upstream):
    """Exact parameter gradients of ``sum(upstream * forward(params, x))``."""
    buf = cache.buf
    B, C, T = buf.shape
    upstream = np.asarray(upstream, dtype=params.dtype)
    if upstream.shape != (B, params.output_dim):
        raise ShapeMismatch(f"upstream gradient must be {(B, params.output_dim)}, got {upstream.shape}")
    grads = params.zeros_like()
    grads.fc_w[...] = upstream.T @ cache.pooled
    grads.fc_b[...] = upstream.sum(axis=0)
    dpooled = (upstream @ params.fc_w) / T
    dbuf = np.empty_like(buf)
    dbuf[...] = dpooled[:, :, None]
    cin = C
    for k in reversed(range(params.num_conv_layers)):
        w = params.conv_w[k]
        cin -= w.shape[0]
        kernels.dense_layer_backward(buf, dbuf, cin, w, int(params.dilations[k]),
                                     grads.conv_w[k], grads.conv_b[k])
    return grads


def conv_forward(params, seg):
    """128-dim embedding of one segment (or a batch of them)."""
    emb, _ = forward(params, seg)
    return emb[0] if _is_single(seg) else emb


def conv_backward(params, seg, upstream):
    """Parameter gradients for one segment given d(objective)/d(embedding)."""
    _, cache = forward(params, seg)
    return backward(params, cache, np.atleast_2d(upstream))


def embed_batch(params, x, batch_size=64):
    """Forward in chunks; returns (n, output_dim) float64."""
    x = np.asarray(x)
    out = np.empty((len(x), params.output_dim))
    for i in range(0, len(x), batch_size):
        emb, _ = forward(params, x[i:i + batch_size].astype(params.dtype, copy=False))
        out[i:i + batch_size] = emb
    return out


def ensemble_embed(models, seg):
    """Concatenate per-model embeddings in the given (fold) order."""
    if len(models) != 4:
        raise ValueError(f"the ensemble uses exactly 4 fold models, got {len(models)}")
    out = ensemble_embed_batch(models, _as_batch(seg, models[0]))
    return out[0] if _is_single(seg) else out


def ensemble_embed_batch(models, x):
    if len(models) != 4:
        raise ValueError(f"the ensemble uses exactly 4 fold models, got {len(models)}")
    return np.concatenate([embed_batch(m, x) for m in models], axis=1)


def centroid(embeddings):
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or len(e) == 0:
        raise ValueError("need a non-empty (n, dim) collection of embeddings")
    return e.mean(axis=0)


# handcrafted baseline ------------------------------------------------------

_BAND_EDGES = np.geomspace(1.0, 500.0, 9)
_PERCENTILES = (5, 25, 50, 75, 95)
_LAGS = (1, 2, 5, 10)


def _channel_features(x, fs):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    d = x - mean
    var = np.dot(d, d) / len(d)
    std = np.sqrt(var)
    if var > 0:
        skew = np.mean(d ** 3) / var ** 1.5
        kurt = np.mean(d ** 4) / var ** 2 - 3.0
    else:
        skew = kurt = 0.0
    pct = np.percentile(np.abs(x), _PERCENTILES)
    signs = np.signbit(x[x != 0])
    zcr = np.count_nonzero(signs[1:] != signs[:-1]) / max(len(x) - 1, 1)
    spec = np.abs(np.fft.rfft(d)) ** 2 / len(d)
    freqs = np.fft.rfftfreq(len(d), 1.0 / fs)
    bands = [spec[(freqs >= lo) & (freqs < hi)].sum() for lo, hi in zip(_BAND_EDGES[:-1], _BAND_EDGES[1:])]
    bands[-1] += spec[freqs == _BAND_EDGES[-1]].sum()
    ac = [np.dot(d[:-lag], d[lag:]) / (len(d) * var) if var > 0 else 0.0 for lag in _LAGS]
    return np.concatenate([[mean, std, skew, kurt], pct, [zcr], np.log1p(bands), ac])


def stat_baseline_embed(seg, fs=1000.0, dim=EMBEDDING_DIM):
    """Deterministic handcrafted features, zero-padded to ``dim``.

    Per channel: mean, std, skewness, excess kurtosis, |v| percentiles
    (5/25/50/75/95), zero-crossing rate, log(1 + power) in 8 log-spaced bands
    between 1 and 500 Hz, autocorrelation at lags 1/2/5/10.
    """
    feats = np.concatenate([_channel_features(seg.vh, fs), _channel_features(seg.vv, fs)])
    out = np.zeros(dim)
    n = min(dim, len(feats))
    out[:n] = feats[:n]
    return out


BASELINE_BAND_SLICE = slice(10, 18)   # band-power entries within one channel's block


# checkpoints ---------------------------------------------------------------

def save_checkpoint(params, path, config_hash="", meta=None):
    """JSON checkpoint with layer shapes, dilations, weights and an integrity hash."""
    doc = {
        "format": "gazeband-conv-embedder/1",
        "config_hash": config_hash,
        "dilations": list(params.dilations),
        "in_channels": params.in_channels,
        "dtype": np.dtype(params.dtype).name,
        "shapes": [list(a.shape) for a in params.arrays()],
        "weights": [a.astype(np.float64).ravel().tolist() for a in params.arrays()],
        "weights_sha256": params.digest(),
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def load_checkpoint(path, expect_config_hash=None):
    doc = json.loads(Path(path).read_text())
    dtype = np.dtype(doc["dtype"])
    arrays = [np.asarray(w, dtype=np.float64).reshape(s).astype(dtype)
              for w, s in zip(doc["weights"], doc["shapes"])]
    n = (len(arrays) - 2) // 2
    params = ConvEmbedderParams(conv_w=arrays[0:2 * n:2], conv_b=arrays[1:2 * n:2],
                                fc_w=arrays[2 * n], fc_b=arrays[2 * n + 1],
                                dilations=tuple(doc["dilations"]),
                                in_channels=doc["in_channels"])
    if params.digest() != doc["weights_sha256"]:
        raise HashMismatch(f"{path}: weights do not match stored digest")
    if expect_config_hash is not None and doc["config_hash"] != expect_config_hash:
        raise HashMismatch(f"{path}: checkpoint config hash {doc['config_hash'][:12]} "
                           f"!= expected {expect_config_hash[:12]}")
    return params, doc
