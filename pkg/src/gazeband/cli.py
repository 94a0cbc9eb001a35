"""Command-line interface.

Exit codes: 0 ok, 1 unexpected failure, 2 configuration error, 3 data error,
4 numeric failure.  Logs go to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from . import config as cfgmod
from . import dsp, ingest
from .errors import ConfigError, GazebandError

log = logging.getLogger("gazeband.cli")

_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime"}


class JsonLinesFormatter(logging.Formatter):
    def format(self, record):
        doc = {"ts": round(record.created, 3), "level": record.levelname.lower(),
               "logger": record.name, "msg": record.getMessage()}
        for k, v in vars(record).items():
            if k not in _RESERVED and not k.startswith("_"):
                doc[k] = v
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc, default=str, sort_keys=False)


def setup_logging(level="info", stream=None):
    root = logging.getLogger("gazeband")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False


# argument parsing ----------------------------------------------------------------

BAND_CHOICES = ("signal", "noise", "unfiltered")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                   help="JSON config file (sections override the defaults)")
    g.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="runs directory (paths.out)")
    g.add_argument("--corpus", type=Path, default=argparse.SUPPRESS,
                   help="read recordings from this directory instead of synthesizing them")
    g.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                   help="single-threaded numeric paths for bit-reproducible reports")
    g.add_argument("--log-level", default=argparse.SUPPRESS,
                   choices=("debug", "info", "warning", "error"))
    return p


def build_parser():
    common = _common()
    p = argparse.ArgumentParser(prog="gazeband", parents=[common],
                                description="Signal/noise band decomposition of eye-movement "
                                            "recordings, band embeddings and biometric evaluation.")
    p.add_argument("--version", action="version", version=f"gazeband {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write the synthetic corpus")
    s.add_argument("--dest", type=Path, help="write the corpus here instead of into the run directory")
    s.add_argument("--long-term", action="store_true", help="add round-6 sessions for held-out subjects")

    sub.add_parser("ingest", parents=[common], help="load, validate and clip recordings")

    f = sub.add_parser("filter", parents=[common], help="split recordings into signal/noise bands")
    f.add_argument("inputs", nargs="*", type=Path,
                   help="CSV files to filter in place (outputs land alongside); "
                        "without inputs the run's corpus is filtered")
    f.add_argument("--cutoff-hz", type=float, default=None, help="-3 dB point (default 75)")
    f.add_argument("--taps", type=int, default=None, help="filter length (default 79)")
    f.add_argument("--band", choices=("signal", "noise", "both"), default="both")
    f.add_argument("--dump-taps", type=Path, help="write the low-pass coefficients as CSV")

    pp = sub.add_parser("preprocess", parents=[common], help="velocity windows and z-scoring")
    pp.add_argument("--band", choices=BAND_CHOICES, action="append")

    t = sub.add_parser("train", parents=[common], help="train fold embedders")
    t.add_argument("--band", choices=BAND_CHOICES, action="append")
    t.add_argument("--fold", default="all", help="0..k-1 or 'all'")
    t.add_argument("--seed", type=int)

    e = sub.add_parser("embed", parents=[common], help="embed held-out templates")
    e.add_argument("--band", choices=BAND_CHOICES, action="append")

    for name, text in (("evaluate", "score, compute metrics, write report.json"),
                       ("report", "evaluate and render every figure"),
                       ("run", "all stages")):
        ev = sub.add_parser(name, parents=[common], help=text)
        ev.add_argument("--band", choices=BAND_CHOICES, action="append")
        ev.add_argument("--term", choices=("short", "long"), action="append")
        ev.add_argument("--target-far", type=float)
        ev.add_argument("--bootstrap", type=int)
        ev.add_argument("--seed", type=int)
        ev.add_argument("--emit-plots", action="store_true")
    return p


def overrides_from_args(args):
    o = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    if getattr(args, "out", None) is not None:
        put("paths", "out", str(args.out))
    if getattr(args, "corpus", None) is not None:
        put("paths", "corpus", str(args.corpus))
        put("paths", "source", "corpus")
    if getattr(args, "long_term", False):
        put("synth", "long_term", True)
    if args.command == "filter":
        put("filter", "cutoff_hz", args.cutoff_hz)
        put("filter", "taps", args.taps)
    bands = getattr(args, "band", None)
    if args.command in ("preprocess", "train", "embed", "evaluate", "report", "run") and bands:
        put("eval", "bands", list(dict.fromkeys(bands)))
    if args.command == "train":
        put("train", "seed", args.seed)
    if args.command in ("evaluate", "report", "run"):
        if args.term:
            put("eval", "terms", list(dict.fromkeys(args.term)))
        put("eval", "target_far", args.target_far)
        put("eval", "bootstrap", args.bootstrap)
        put("eval", "seed", args.seed)
    return o


# commands ----------------------------------------------------------------------

def _pipeline(cfg, args):
    from .pipeline import Pipeline
    return Pipeline(cfg, deterministic=bool(getattr(args, "deterministic", False)))


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def cmd_synth(cfg, args):
    if args.dest is not None:
        from .pipeline import Pipeline
        spec = Pipeline(cfg).corpus_spec()
        from .synth import write_corpus
        write_corpus(spec, args.dest)
        _emit({"corpus": str(args.dest)})
        return
    p = _pipeline(cfg, args)
    p.synth()
    _emit({"run": str(p.root), "corpus": str(p.corpus_dir)})


def cmd_ingest(cfg, args):
    p = _pipeline(cfg, args)
    idx = p.index()
    _emit({"run": str(p.root), "recordings": len(idx["recordings"]), "held_out": len(idx["held_out"])})


def _filter_files(cfg, args):
    fs = float(cfg["ingest"]["sample_rate_hz"])
    low = dsp.design_lowpass(fs, float(cfg["filter"]["cutoff_hz"]), int(cfg["filter"]["taps"]))
    h0, h1, v0, v1 = cfg["ingest"]["bounds"]
    bounds = ingest.ScreenBounds(h0, h1, v0, v1)
    cols = tuple(cfg["ingest"]["columns"])
    written = []
    for path in args.inputs:
        try:
            subj, rnd, ses, task = ingest.parse_recording_path(path)
        except ValueError:
            subj, rnd, ses, task = "unknown", 0, 0, ingest.Task.TEX
        rec = ingest.load_recording(path, subj, rnd, ses, task, columns=cols, sample_rate_hz=fs)
        pair = dsp.split_signal_noise(ingest.clip_offscreen(rec, bounds), low)
        for band, out in (("signal", pair.signal), ("noise", pair.noise)):
            if args.band in (band, "both"):
                suffix = "_sig" if band == "signal" else "_noise"
                dst = path.with_name(path.stem + suffix + path.suffix)
                ingest.save_recording(out, dst, columns=cols)
                written.append(str(dst))
    return low, written


def cmd_filter(cfg, args):
    from .pipeline import write_taps
    if args.inputs:
        low, written = _filter_files(cfg, args)
        out = {"written": written}
    else:
        p = _pipeline(cfg, args)
        p.filter()
        low = p.lowpass()
        out = {"run": str(p.root), "filtered": str(p.root / "filter")}
    if args.dump_taps is not None:
        write_taps(low, args.dump_taps)
        out["taps"] = str(args.dump_taps)
    out["realized_minus3db_hz"] = low.realized_minus3db_hz
    _emit(out)


def cmd_preprocess(cfg, args):
    p = _pipeline(cfg, args)
    p.preprocess()
    _emit({"run": str(p.root), "bands": cfg["eval"]["bands"]})


def cmd_train(cfg, args):
    p = _pipeline(cfg, args)
    k = int(cfg["train"]["folds"])
    if args.fold == "all":
        folds = None
    else:
        try:
            folds = [int(args.fold)]
        except ValueError:
            raise ConfigError(f"--fold must be an integer in 0..{k - 1} or 'all'") from None
        if not 0 <= folds[0] < k:
            raise ConfigError(f"--fold must lie in 0..{k - 1}")
    p.train(folds=folds)
    _emit({"run": str(p.root), "bands": cfg["eval"]["bands"],
           "checkpoints": [str(p.checkpoint_path(b, f)) for b in cfg["eval"]["bands"]
                           for f in (range(k) if folds is None else folds)]})


def cmd_embed(cfg, args):
    p = _pipeline(cfg, args)
    p.embed()
    _emit({"run": str(p.root), "embeddings": [str(p.eval_dir / "embed" / b / "embeddings.csv")
                                              for b in cfg["eval"]["bands"]]})


def cmd_evaluate(cfg, args):
    p = _pipeline(cfg, args)
    p.evaluate(emit_plots=args.emit_plots)
    sys.stdout.write((p.eval_dir / "table.txt").read_text())
    _emit({"report": str(p.eval_dir / "report.json")})


def cmd_report(cfg, args):
    p = _pipeline(cfg, args)
    path = p.report()
    sys.stdout.write((p.eval_dir / "table.txt").read_text())
    _emit({"report": str(path), "plots": str(p.eval_dir / "plots")})


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "filter": cmd_filter,
            "preprocess": cmd_preprocess, "train": cmd_train, "embed": cmd_embed,
            "evaluate": cmd_evaluate, "report": cmd_report, "run": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, "log_level", "info"))
    t0 = time.perf_counter()
    try:
        cfg = cfgmod.load_config(getattr(args, "config", None), overrides_from_args(args))
        COMMANDS[args.command](cfg, args)
    except GazebandError as exc:
        log.error(str(exc), extra={"error": type(getattr(exc, "cause", exc)).__name__,
                                   "stage": getattr(exc, "stage", None),
                                   "path": getattr(exc, "path", None)})
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    log.info("finished", extra={"command": args.command,
                                "seconds": round(time.perf_counter() - t0, 3)})
    return 0


if __name__ == "__main__":
    sys.exit(main())
