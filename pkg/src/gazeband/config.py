"""Pipeline configuration: defaults, presets, overrides and the config hash.

A config is a two-level mapping ``section -> key -> value``.  Files are
JSON; environment variables ``GAZEBAND_<SECTION>__<KEY>`` override single
keys (values parsed as JSON, falling back to plain strings).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "GAZEBAND_"

DEFAULTS = {
    "paths": {
        # "synth": generate the corpus inside the run directory; "corpus": read paths.corpus
        "source": "synth",
        "corpus": "corpus",
        "out": "runs",
        "glob": "round_*/S_*_S*_*.csv",
    },
    "ingest": {
        "columns": ["n", "x", "y"],
        "sample_rate_hz": 1000.0,
        "bounds": [-23.3, 23.3, -18.5, 11.7],
        "exclude_tasks": ["BLG"],
    },
    "synth": {
        "n_heldout": 20,
        "n_train": 16,
        "heldout_duration_s": 90.0,
        "train_duration_s": 60.0,
        "long_term": False,
        "long_term_jitter_scale": 2.0,
    },
    "filter": {
        "cutoff_hz": 75.0,
        "taps": 79,
    },
    "preprocess": {
        "sg_window": 7,
        "sg_order": 2,
        "segment_length": 5000,
        "clamp": 1000.0,
    },
    "train": {
        "epochs": 100,
        "warmup_epochs": 30,
        "lr_start": 1e-4,
        "lr_peak": 1e-2,
        "lr_floor": 1e-7,
        "classes_per_batch": 8,
        "samples_per_class": 8,
        "max_batches_per_epoch": 0,
        "ms_alpha": 2.0,
        "ms_beta": 50.0,
        "ms_base": 0.5,
        "ms_epsilon": 0.1,
        "growth_channels": 8,
        "kernel_size": 3,
        "dilations": [1, 2, 4, 8, 16, 32, 64, 1],
        "dtype": "float32",
        "folds": 4,
        # None: derive from master_seed
        "seed": None,
    },
    "eval": {
        "task": "TEX",
        "windows": 12,
        "target_far": 1e-4,
        "bootstrap": 1000,
        "terms": ["short"],
        "bands": ["signal", "noise", "unfiltered"],
        "shuffles": 200,
        "seed": None,
    },
    "master_seed": 20240501,
}


def _merge(base, over, where=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be a section")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v
    return base


def _parse_env_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or name == "GAZEBAND_PURE_PYTHON":
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        if len(parts) == 1:
            out[parts[0]] = _parse_env_value(raw)
        elif len(parts) == 2:
            out.setdefault(parts[0], {})[parts[1]] = _parse_env_value(raw)
        else:
            raise ConfigError(f"cannot map environment variable {name}")
    return out


def load_config(path=None, overrides=None, environ=None):
    """Defaults <- file <- environment <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.pop("description", None)
        _merge(cfg, data)
    _merge(cfg, env_overrides(environ))
    if overrides:
        _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg):
    f = cfg["filter"]
    if int(f["taps"]) % 2 == 0:
        raise ConfigError("filter.taps must be odd")
    if not 0 < float(f["cutoff_hz"]) < cfg["ingest"]["sample_rate_hz"] / 2:
        raise ConfigError("filter.cutoff_hz must lie below Nyquist")
    t = cfg["train"]
    if not 0 <= t["warmup_epochs"] <= t["epochs"]:
        raise ConfigError("train.warmup_epochs must lie in [0, train.epochs]")
    if len(t["dilations"]) < 1:
        raise ConfigError("train.dilations must not be empty")
    for term in cfg["eval"]["terms"]:
        if term not in ("short", "long"):
            raise ConfigError(f"unknown evaluation term {term!r}")
    for band in cfg["eval"]["bands"]:
        if band not in ("signal", "noise", "unfiltered"):
            raise ConfigError(f"unknown band {band!r}")
    if cfg["paths"]["source"] not in ("synth", "corpus"):
        raise ConfigError("paths.source must be 'synth' or 'corpus'")
    b = cfg["ingest"]["bounds"]
    if not (b[0] < b[1] and b[2] < b[3]):
        raise ConfigError("ingest.bounds must be [h_min, h_max, v_min, v_max] with min < max")


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(obj):
    return hashlib.sha256(canonical(obj).encode("ascii")).hexdigest()


def config_hash(cfg, sections=None):
    """Digest of the canonical serialization; ``paths`` never participates."""
    body = {k: v for k, v in cfg.items() if k != "paths"}
    if sections is not None:
        body = {k: body[k] for k in sections}
    return digest(body)
