"""End-to-end orchestration: synth -> ingest -> filter -> preprocess -> train ->
embed -> evaluate -> report.

Everything lives under one run directory ``<out>/run_<id>``, where the id is
the hash of every config section that shapes the trained models.
Evaluation settings get their own subdirectory ``eval_<hash>`` so that
different evaluations of one run never overwrite each other.

Each stage is stamped with a key (a digest of the config it depends on and
the keys of its inputs).  A stage whose stamp matches is skipped.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dsp, embedder, evaluation, features, ingest, svg, synth, trainer
from .errors import GazebandError, HashMismatch, StageError
from .features import Band, VelocitySegment

log = logging.getLogger("gazeband.pipeline")

STAGES = ("synth", "ingest", "filter", "preprocess", "train", "embed", "evaluate", "report")
BANDS = tuple(b.value for b in Band)
FILTERED_SUFFIX = {"signal": "_sig", "noise": "_noise"}
EXEMPLAR_SPAN_S = (10.0, 12.0)
EXEMPLAR_SUBJECTS = 2
STAMP = ".done.json"


@contextlib.contextmanager
def single_threaded(enabled=True):
    """Pin BLAS/OpenMP pools to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _train_config(cfg, seed=None):
    t = dict(cfg["train"])
    t.pop("folds")
    s = t.pop("seed")
    if seed is None:
        seed = cfg["master_seed"] if s is None else s
    return trainer.TrainConfig.from_dict({**t, "seed": int(seed)})


def _eval_seed(cfg):
    s = cfg["eval"]["seed"]
    return cfg["master_seed"] if s is None else int(s)


def _bounds(cfg):
    h0, h1, v0, v1 = cfg["ingest"]["bounds"]
    return ingest.ScreenBounds(h0, h1, v0, v1)


def _rec_name(key):
    subj, rnd, ses, task = key
    return f"round_{rnd}/S_{subj}_S{ses}_{task}"


class Pipeline:
    """One configured run.  Stage methods are idempotent and pull in their inputs."""

    def __init__(self, cfg, out_dir=None, deterministic=False):
        self.cfg = cfg
        self.deterministic = deterministic
        self.config_hash = cfgmod.config_hash(cfg)
        self.source_key = self._source_key()
        model_sections = {k: v for k, v in cfg.items() if k not in ("paths", "eval")}
        self.run_id = cfgmod.digest({"config": model_sections, "source": self.source_key})
        self.root = Path(out_dir if out_dir is not None else cfg["paths"]["out"]) / f"run_{self.run_id[:12]}"
        self.eval_id = cfgmod.digest({"run": self.run_id, "eval": cfg["eval"]})
        self.eval_dir = self.root / f"eval_{self.eval_id[:12]}"
        self._memo = {}

    # bookkeeping ----------------------------------------------------------

    def _source_key(self):
        if self.cfg["paths"]["source"] == "synth":
            return cfgmod.digest({"synth": self.cfg["synth"], "seed": self.cfg["master_seed"]})
        root = Path(self.cfg["paths"]["corpus"])
        files = ingest.discover(root, self.cfg["paths"]["glob"])
        listing = sorted((str(p.relative_to(root)), p.stat().st_size) for p in files.values())
        return cfgmod.digest({"corpus": listing})

    def _key(self, *parts):
        return cfgmod.digest(list(parts))

    def _done(self, path, key):
        stamp = path / STAMP
        if not stamp.exists():
            return False
        try:
            return json.loads(stamp.read_text()).get("key") == key
        except json.JSONDecodeError:
            return False

    def _stage(self, name, path, key, fn):
        """Run ``fn`` unless ``path`` already carries a stamp for ``key``."""
        if self._done(path, key):
            log.debug("stage cached", extra={"stage": name, "path": str(path)})
            return False
        path.mkdir(parents=True, exist_ok=True)
        log.info("stage start", extra={"stage": name, "path": str(path)})
        try:
            with single_threaded(self.deterministic):
                fn()
        except StageError:
            raise
        except (GazebandError, OSError, ValueError) as exc:
            raise StageError(name, str(path), exc) from exc
        _write_json(path / STAMP, {"stage": name, "key": key, "config_hash": self.config_hash,
                                   "run_id": self.run_id})
        log.info("stage done", extra={"stage": name, "path": str(path)})
        return True

    def write_config(self):
        _write_json(self.root / "config.json", self.cfg)

    # synth / ingest -----------------------------------------------------------

    @property
    def corpus_dir(self):
        if self.cfg["paths"]["source"] == "synth":
            return self.root / "corpus"
        return Path(self.cfg["paths"]["corpus"])

    def corpus_spec(self):
        s = self.cfg["synth"]
        return synth.CorpusSpec(n_heldout=int(s["n_heldout"]), n_train=int(s["n_train"]),
                                heldout_duration_s=float(s["heldout_duration_s"]),
                                train_duration_s=float(s["train_duration_s"]),
                                master_seed=int(self.cfg["master_seed"]),
                                long_term=bool(s["long_term"]),
                                long_term_jitter_scale=float(s["long_term_jitter_scale"]))

    def synth(self):
        self.write_config()
        if self.cfg["paths"]["source"] != "synth":
            return False
        return self._stage("synth", self.corpus_dir, self.source_key,
                           lambda: synth.write_corpus(self.corpus_spec(), self.corpus_dir))

    @property
    def ingest_key(self):
        return self._key("ingest", self.source_key, self.cfg["ingest"], self.cfg["paths"]["glob"])

    def ingest(self):
        self.synth()
        path = self.root / "ingest"
        return self._stage("ingest", path, self.ingest_key, lambda: self._do_ingest(path))

    def _do_ingest(self, path):
        ic = self.cfg["ingest"]
        found = ingest.discover(self.corpus_dir, self.cfg["paths"]["glob"])
        excluded = set(ic["exclude_tasks"])
        index = []
        for key, src in found.items():
            if key[3] in excluded:
                continue
            rec = ingest.load_recording(src, *key, columns=tuple(ic["columns"]),
                                        sample_rate_hz=float(ic["sample_rate_hz"]))
            try:
                rec = ingest.clip_offscreen(rec, _bounds(self.cfg))
            except GazebandError as exc:
                raise StageError("ingest", str(src), exc) from exc
            dst = path / (_rec_name(key) + ".npz")
            dst.parent.mkdir(parents=True, exist_ok=True)
            np.savez(dst, h=rec.h, v=rec.v, t=rec.timestamps)
            index.append({"subject": key[0], "round": key[1], "session": key[2], "task": key[3],
                          "samples": len(rec), "nan_fraction": float(np.mean(np.isnan(rec.h))),
                          "source": str(Path(src).relative_to(self.corpus_dir))})
        if not index:
            raise StageError("ingest", str(self.corpus_dir),
                             ingest.EmptyRecording("no recordings found"))
        held = self._held_out_from(index)
        _write_json(path / "index.json", {"recordings": index, "held_out": held,
                                          "config_hash": self.config_hash})

    def _held_out_from(self, index):
        man = synth.read_manifest(self.corpus_dir)
        if man is not None:
            return sorted(s["subject_id"] for s in man["subjects"] if s["held_out"])
        # GazeBase convention: subjects still present in round 6 form the test set
        return sorted({r["subject"] for r in index if r["round"] == 6})

    def index(self):
        self.ingest()
        return json.loads((self.root / "ingest" / "index.json").read_text())

    def keys(self):
        return [(r["subject"], r["round"], r["session"], r["task"]) for r in self.index()["recordings"]]

    def held_out(self):
        return self.index()["held_out"]

    def training_subjects(self):
        held = set(self.held_out())
        return sorted({k[0] for k in self.keys()} - held)

    def load_raw(self, key):
        sr = float(self.cfg["ingest"]["sample_rate_hz"])
        with np.load(self.root / "ingest" / (_rec_name(key) + ".npz")) as z:
            return ingest.GazeRecording(subject_id=key[0], round_id=key[1], session_id=key[2],
                                        task=ingest.Task(key[3]), h=z["h"], v=z["v"],
                                        sample_rate_hz=sr, timestamps=z["t"])

    # filter -------------------------------------------------------------------

    def lowpass(self):
        f = self.cfg["filter"]
        return dsp.design_lowpass(float(self.cfg["ingest"]["sample_rate_hz"]),
                                  float(f["cutoff_hz"]), int(f["taps"]))

    @property
    def filter_key(self):
        return self._key("filter", self.ingest_key, self.cfg["filter"])

    def filter(self):
        self.ingest()
        path = self.root / "filter"
        return self._stage("filter", path, self.filter_key, lambda: self._do_filter(path))

    def _do_filter(self, path):
        low = self.lowpass()
        write_taps(low, path / "taps.csv")
        _write_json(path / "filter.json", {
            "num_taps": low.num_taps, "nominal_cutoff_hz": low.nominal_cutoff_hz,
            "realized_minus3db_hz": low.realized_minus3db_hz,
            "sample_rate_hz": low.sample_rate_hz, "config_hash": self.config_hash})
        for key in self.keys():
            pair = dsp.split_signal_noise(self.load_raw(key), low)
            for band, rec in (("signal", pair.signal), ("noise", pair.noise)):
                ingest.save_recording(rec, self._filtered_path(key, band))

    def _filtered_path(self, key, band):
        return self.root / "filter" / (_rec_name(key) + FILTERED_SUFFIX[band] + ".csv")

    def load_band(self, key, band):
        band = Band(band).value
        if band == "unfiltered":
            return self.load_raw(key)
        rec = ingest.load_recording(self._filtered_path(key, band), *key,
                                    sample_rate_hz=float(self.cfg["ingest"]["sample_rate_hz"]))
        return rec

    # preprocess ---------------------------------------------------------------

    def preprocess_key(self, band):
        upstream = self.ingest_key if band == "unfiltered" else self.filter_key
        return self._key("preprocess", upstream, self.cfg["preprocess"], band)

    def preprocess(self, bands=None):
        ran = False
        for band in bands or self.cfg["eval"]["bands"]:
            if band != "unfiltered":
                self.filter()
            else:
                self.ingest()
            path = self.root / "preprocess" / band
            ran |= self._stage("preprocess", path, self.preprocess_key(band),
                               lambda b=band, p=path: self._do_preprocess(b, p))
        return ran

    def _do_preprocess(self, band, path):
        pc = self.cfg["preprocess"]
        kw = dict(window=int(pc["sg_window"]), order=int(pc["sg_order"]),
                  length=int(pc["segment_length"]), clamp=float(pc["clamp"]))
        raw = {key: features.recording_segments(self.load_band(key, band), band, **kw)
               for key in self.keys()}
        train_subj = set(self.training_subjects())
        fit_on = [s for key in sorted(raw) if key[0] in train_subj for s in raw[key]]
        if not fit_on:
            fit_on = [s for key in sorted(raw) for s in raw[key]]
            log.warning("no training subjects; normalization fitted on all subjects")
        stats = features.fit_norm_stats(fit_on)
        by_subject = {}
        for key in sorted(raw):
            by_subject.setdefault(key[0], []).extend(features.normalize_segments(raw[key], stats))
        for subj, segs in by_subject.items():
            save_segments(segs, path / f"{subj}.npz")
        _write_json(path / "norm_stats.json", {
            "band": band, "norm_stats": stats.to_dict(), "fitted_on": sorted(train_subj),
            "config_hash": self.config_hash, "preprocess": pc})

    def segments(self, band, subjects=None):
        """Finalized segments keyed like recordings: key -> [VelocitySegment]."""
        memo = ("segments", band)
        if memo not in self._memo:
            self.preprocess([band])
            out = {}
            for p in sorted((self.root / "preprocess" / band).glob("*.npz")):
                for s in load_segments(p, band):
                    out.setdefault((s.subject_id, s.round_id, s.session_id, s.task), []).append(s)
            self._memo[memo] = out
        segs = self._memo[memo]
        if subjects is None:
            return segs
        subjects = set(subjects)
        return {k: v for k, v in segs.items() if k[0] in subjects}

    # train --------------------------------------------------------------------

    def folds(self, band):
        counts = {}
        for key in self.keys():
            if key[0] in set(self.training_subjects()):
                counts[key[0]] = counts.get(key[0], 0) + 1
        return trainer.assign_folds(counts, int(self.cfg["train"]["folds"]), self.held_out())

    def train_key(self, band, fold):
        return self._key("train", self.preprocess_key(band), self.cfg["train"],
                         self.cfg["master_seed"], fold)

    def checkpoint_path(self, band, fold):
        return self.root / "train" / band / f"fold_{fold}" / "checkpoint.json"

    def train(self, bands=None, folds=None):
        ran = False
        k = int(self.cfg["train"]["folds"])
        for band in bands or self.cfg["eval"]["bands"]:
            self.preprocess([band])
            fa = self.folds(band)
            _write_json(self.root / "train" / band / "folds.json", fa.to_dict())
            for fold in (range(k) if folds is None else folds):
                path = self.checkpoint_path(band, fold).parent
                ran |= self._stage("train", path, self.train_key(band, fold),
                                   lambda b=band, f=fold, p=path, a=fa: self._do_train(b, f, p, a))
        return ran

    def _do_train(self, band, fold, path, fa):
        tc = _train_config(self.cfg)
        held = set(self.held_out())
        segs = self.segments(band)
        tr, va = [], []
        for key in sorted(segs):
            if key[0] in held:
                continue
            (va if fa.fold_of_subject[key[0]] == fold else tr).extend(segs[key])
        if not tr:
            raise trainer.EmptyTrainingSet(f"fold {fold} of band {band} has no training segments")
        x = features.stack_segments(tr, dtype=np.dtype(tc.dtype))
        y = np.array([s.subject_id for s in tr])
        xv = features.stack_segments(va, dtype=np.dtype(tc.dtype))
        yv = np.array([s.subject_id for s in va])

        def on_epoch(entry):
            log.info("epoch", extra={"band": band, **entry})

        result = trainer.train(fold, x, y, tc, xv, yv, on_epoch=on_epoch)
        with open(path / "log.jsonl", "w") as fh:
            for entry in result.log:
                fh.write(json.dumps(_jsonable({"band": band, **entry}), sort_keys=True) + "\n")
        embedder.save_checkpoint(result.params, path / "checkpoint.json",
                                 config_hash=self.train_key(band, fold),
                                 meta={"band": band, "fold": fold, "train_config": tc.to_dict(),
                                       "validation_subjects": fa.subjects(fold)})

    def models(self, band):
        """The fold checkpoints of ``band``, verified against digest and config."""
        k = int(self.cfg["train"]["folds"])
        out = []
        for fold in range(k):
            params, _ = embedder.load_checkpoint(self.checkpoint_path(band, fold),
                                                 expect_config_hash=self.train_key(band, fold))
            out.append(params)
        return out

    # embed --------------------------------------------------------------------

    def embed_key(self, band):
        k = int(self.cfg["train"]["folds"])
        e = self.cfg["eval"]
        return self._key("embed", [self.train_key(band, f) for f in range(k)],
                         e["task"], e["windows"], e["terms"])

    def embed(self, bands=None):
        ran = False
        for band in bands or self.cfg["eval"]["bands"]:
            self.train([band])
            path = self.eval_dir / "embed" / band
            ran |= self._stage("embed", path, self.embed_key(band),
                               lambda b=band, p=path: self._do_embed(b, p))
        return ran

    def _eval_recordings(self):
        """(subject, round, session) of every template the configured terms need."""
        want = []
        for term in self.cfg["eval"]["terms"]:
            for rs in evaluation.TERMS[term]:
                if rs not in want:
                    want.append(rs)
        return want

    def _do_embed(self, band, path):
        e = self.cfg["eval"]
        models = self.models(band)
        held = self.held_out()
        segs = self.segments(band, held)
        rows = []
        for subj in held:
            for rnd, ses in self._eval_recordings():
                try:
                    win = evaluation.template_windows(segs, subj, rnd, ses, e["task"], int(e["windows"]))
                except GazebandError as exc:
                    raise StageError("embed", str(path), exc) from exc
                emb = embedder.ensemble_embed_batch(models, features.stack_segments(win))
                for s, vec in zip(win, emb):
                    rows.append((subj, rnd, ses, e["task"], s.window_index, vec))
        write_embeddings(rows, path / "embeddings.csv")
        _write_json(path / "checkpoints.json",
                    {"weights_sha256": [m.digest() for m in models], "config_hash": self.config_hash})

    # evaluate -----------------------------------------------------------------

    def evaluate(self, emit_plots=False):
        bands = list(self.cfg["eval"]["bands"])
        self.embed(bands)
        # never score with checkpoints that changed after embedding
        for band in bands:
            rec = json.loads((self.eval_dir / "embed" / band / "checkpoints.json").read_text())
            try:
                digests = [m.digest() for m in self.models(band)]
            except HashMismatch as exc:
                raise StageError("evaluate", str(self.root / "train" / band), exc) from exc
            if digests != rec["weights_sha256"]:
                raise StageError("evaluate", str(self.root / "train" / band),
                                 HashMismatch("checkpoints differ from those used for embedding"))
        key = self._key("evaluate", [self.embed_key(b) for b in bands], self.cfg["eval"])
        ran = self._stage("evaluate", self.eval_dir / "evaluate", key, self._do_evaluate)
        if emit_plots:
            self.plots()
        return ran

    def centroids(self, band, term):
        e = self.cfg["eval"]
        emb = read_embeddings(self.eval_dir / "embed" / band / "embeddings.csv")
        (er, es), (ar, as_) = evaluation.TERMS[term]
        enroll, auth = [], []
        held = self.held_out()
        for subj in held:
            enroll.append(embedder.centroid(emb[(subj, er, es, e["task"])]))
            auth.append(embedder.centroid(emb[(subj, ar, as_, e["task"])]))
        return np.array(enroll), np.array(auth), held

    def _do_evaluate(self):
        e = self.cfg["eval"]
        seed = _eval_seed(self.cfg)
        reports, chance = [], {}
        for term in e["terms"]:
            for band in e["bands"]:
                enroll, auth, held = self.centroids(band, term)
                rep, _, _ = evaluation.evaluate_centroids(
                    enroll, auth, band, term, float(e["target_far"]), int(e["bootstrap"]), seed, held)
                reports.append(rep)
                chance.setdefault(term, {})[band] = evaluation.shuffled_label_eer(
                    enroll, auth, int(e["shuffles"]), seed)
        out = self.eval_dir / "evaluate"
        doc = {"run_id": self.run_id, "config_hash": self.config_hash, "eval": e,
               "held_out_subjects": self.held_out(),
               "reports": [r.to_dict() for r in reports],
               "shuffled_label_eer_pct": chance}
        report_path = self.eval_dir / "report.json"
        _write_json(report_path, doc)
        (self.eval_dir / "table.txt").write_text(evaluation.render_table(reports))
        (out / "files.json").write_text(json.dumps(["report.json", "table.txt"]))

    def report_doc(self):
        return json.loads((self.eval_dir / "report.json").read_text())

    # figures ------------------------------------------------------------------

    def plots(self):
        plots = self.eval_dir / "plots"
        plots.mkdir(parents=True, exist_ok=True)
        e = self.cfg["eval"]
        for term in e["terms"]:
            for band in e["bands"]:
                enroll, auth, held = self.centroids(band, term)
                scores = evaluation.score_all(enroll, auth, held)
                roc = evaluation.compute_roc(scores)
                tag = f"{term}_{band}"
                (plots / f"{tag}_scores.svg").write_text(
                    svg.render_score_histogram(scores, f"{term}-term {band}: genuine vs impostor"))
                (plots / f"{tag}_roc_det.svg").write_text(svg.render_roc_det(roc, f"{term}-term {band} ROC"))

    def exemplars(self, subjects=None, span=EXEMPLAR_SPAN_S):
        self.filter()
        subjects = subjects or self.held_out()[:EXEMPLAR_SUBJECTS]
        rows = []
        for subj in subjects:
            key = next(k for k in self.keys() if k[0] == subj)
            raw = self.load_raw(key)
            pair = dsp.BandPair(signal=self.load_band(key, "signal"),
                                noise=self.load_band(key, "noise"), raw_interpolated=raw)
            rows.append((f"subject {subj}", raw, pair))
        return svg.render_exemplars(rows, *span)

    def report(self):
        self.evaluate()
        key = self._key("report", self.eval_id, self.filter_key)

        def do():
            self.plots()
            (self.eval_dir / "plots" / "exemplars.svg").write_text(self.exemplars())

        self._stage("report", self.eval_dir / "report", key, do)
        return self.eval_dir / "report.json"

    def run(self):
        return self.report()


def run_pipeline(cfg, out_dir=None, deterministic=False):
    """Run every stage; returns the path of ``report.json``."""
    return Pipeline(cfg, out_dir, deterministic).run()


# artifact formats ------------------------------------------------------------

def write_taps(filt, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["index,coefficient"] + [f"{i},{float(c)!r}" for i, c in enumerate(filt.taps)]
    path.write_text("\n".join(lines) + "\n")


def save_segments(segs, path):
    x = np.stack([s.as_array(np.float32) for s in segs])
    np.savez(path, x=x,
             round=np.array([s.round_id for s in segs]),
             session=np.array([s.session_id for s in segs]),
             task=np.array([s.task for s in segs]),
             window=np.array([s.window_index for s in segs]),
             subject=np.array([s.subject_id for s in segs]))


def load_segments(path, band):
    with np.load(path) as z:
        x = z["x"]
        return [VelocitySegment(vh=x[i, 0], vv=x[i, 1], subject_id=str(z["subject"][i]),
                                round_id=int(z["round"][i]), session_id=int(z["session"][i]),
                                task=str(z["task"][i]), window_index=int(z["window"][i]),
                                band=Band(band))
                for i in range(len(x))]


EMBED_TAGS = ("subject", "round", "session", "task", "window")


def write_embeddings(rows, path):
    """CSV of tags followed by the embedding; repr floats round-trip exactly."""
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = len(rows[0][-1]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(EMBED_TAGS) + [f"e{i:03d}" for i in range(dim)])
        for *tags, vec in rows:
            w.writerow(list(tags) + [repr(float(v)) for v in vec])


def read_embeddings(path):
    """(subject, round, session, task) -> (n_windows, dim) array in window order."""
    groups = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            key = (row[0], int(row[1]), int(row[2]), row[3])
            groups.setdefault(key, []).append((int(row[4]), [float(v) for v in row[5:]]))
    return {k: np.array([v for _, v in sorted(g)]) for k, g in groups.items()}
