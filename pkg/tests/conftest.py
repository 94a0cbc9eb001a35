import numpy as np
import pytest

from gazeband import dsp, synth
from gazeband.ingest import GazeRecording, Task


def make_rec(h, v=None, subject="001", round_id=1, session_id=1, fs=1000.0):
    h = np.asarray(h, dtype=float)
    v = np.zeros_like(h) if v is None else np.asarray(v, dtype=float)
    return GazeRecording(subject_id=subject, round_id=round_id, session_id=session_id,
                         task=Task.TEX, h=h, v=v, sample_rate_hz=fs,
                         timestamps=np.arange(len(h), dtype=float))


@pytest.fixture(scope="session")
def lowpass():
    return dsp.design_lowpass()


@pytest.fixture(scope="session")
def profile():
    return synth.make_profile(0, 42)


@pytest.fixture(scope="session")
def synth_rec(profile):
    return synth.generate_recording(profile, 12.0, 7, subject_id="001")


TINY = {"synth": {"n_heldout": 4, "n_train": 12, "heldout_duration_s": 60.0, "train_duration_s": 60.0},
        "train": {"epochs": 1, "warmup_epochs": 0, "max_batches_per_epoch": 1},
        "eval": {"bootstrap": 10, "shuffles": 5}}


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    import json
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="session")
def tiny_run(tiny_config_file, tmp_path_factory):
    """A complete small run, shared by the pipeline and CLI tests."""
    from gazeband import config, pipeline
    out = tmp_path_factory.mktemp("runs")
    cfg = config.load_config(tiny_config_file, {"paths": {"out": str(out)}}, environ={})
    p = pipeline.Pipeline(cfg, deterministic=True)
    p.run()
    return p


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
