import numpy as np
import pytest

from gazeband import embedder, synth, dsp, features
from gazeband.errors import HashMismatch, ShapeMismatch
from gazeband.features import Band, VelocitySegment

from oracles import embedder_gradcheck, rel_err


def rand_x(seed, B=2, T=512, dtype=np.float64):
    return np.random.Generator(np.random.PCG64(seed)).standard_normal((B, 2, T)).astype(dtype)


def test_shapes_and_dense_widths():
    p = embedder.init_params(0)
    assert [w.shape[1] for w in p.conv_w] == [2 + 8 * k for k in range(8)]
    assert p.total_channels == 66 and p.fc_w.shape == (128, 66)
    assert p.num_parameters() == sum(8 * (2 + 8 * k) * 3 + 8 for k in range(8)) + 66 * 128 + 128
    emb = embedder.conv_forward(p, rand_x(1, 1, 5000, np.float32)[0])
    assert emb.shape == (128,) and np.isfinite(emb).all()
    assert embedder.conv_forward(p, rand_x(1, 3, 700, np.float32)).shape == (3, 128)


def test_shape_errors():
    p = embedder.init_params(0)
    with pytest.raises(ShapeMismatch):
        embedder.forward(p, np.zeros((1, 3, 100), np.float32))
    emb, cache = embedder.forward(p, np.zeros((2, 2, 100), np.float32))
    with pytest.raises(ShapeMismatch):
        embedder.backward(p, cache, np.zeros((2, 64)))


def test_zero_params_give_zero_embedding():
    z = embedder.init_params(0).zeros_like()
    assert not embedder.conv_forward(z, rand_x(2, 1, 300, np.float32)[0]).any()


def test_zero_upstream_gives_zero_gradients():
    p = embedder.init_params(3, dtype=np.float64)
    g = embedder.conv_backward(p, rand_x(4, 1, 300)[0], np.zeros(128))
    assert not g.flat().any()


def test_gradients_match_finite_differences():
    p = embedder.init_params(5, dtype=np.float64)
    # random biases so that some units start active and some inactive
    rng = np.random.Generator(np.random.PCG64(6))
    for b in p.conv_b:
        b[...] = rng.normal(0, 0.1, b.shape)
    x = rand_x(7, 2, 256)
    up = rng.standard_normal((2, 128))
    coords = rng.choice(p.num_parameters(), 160, replace=False)
    res = embedder_gradcheck(p, x, up, coords)
    valid = [(a, n) for _, a, n in res if n is not None]
    assert len(valid) >= 100
    worst = max(rel_err(a, n) for a, n in valid)
    assert worst < 1e-4


def test_determinism():
    p = embedder.init_params(1)
    x = rand_x(8, 2, 5000, np.float32)
    assert embedder.conv_forward(p, x).tobytes() == embedder.conv_forward(p, x).tobytes()
    assert embedder.init_params(1).digest() == p.digest()
    assert embedder.init_params(2).digest() != p.digest()


def test_batch_matches_single():
    p = embedder.init_params(1, dtype=np.float64)
    x = rand_x(9, 5, 600)
    batch = embedder.embed_batch(p, x, batch_size=2)
    for i in range(5):
        np.testing.assert_allclose(batch[i], embedder.conv_forward(p, x[i]), rtol=1e-12, atol=1e-12)


def test_ensemble():
    p = embedder.init_params(1)
    seg = VelocitySegment(*rand_x(3, 1, 1000)[0], "001", 1, 1, "TEX", 0)
    e = embedder.ensemble_embed([p] * 4, seg)
    single = embedder.conv_forward(p, seg)
    np.testing.assert_array_equal(e, np.tile(single, 4))
    models = [embedder.init_params(i) for i in range(4)]
    e = embedder.ensemble_embed(models, seg)
    assert e.shape == (512,)
    np.testing.assert_array_equal(e[:128], embedder.conv_forward(models[0], seg))
    with pytest.raises(ValueError):
        embedder.ensemble_embed(models[:3], seg)


def test_centroid():
    v = np.arange(5.0)
    np.testing.assert_array_equal(embedder.centroid([v]), v)
    np.testing.assert_array_equal(embedder.centroid([v, -v]), np.zeros(5))
    rng = np.random.Generator(np.random.PCG64(0))
    e = rng.standard_normal((12, 512))
    naive = [sum(e[r, c] for r in range(12)) / 12 for c in range(512)]
    np.testing.assert_allclose(embedder.centroid(e), naive, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        embedder.centroid(np.zeros((0, 3)))


def test_circular_shift_changes_little():
    p = embedder.init_params(4)
    x = rand_x(10, 1, 5000, np.float32)
    a = embedder.conv_forward(p, x)[0]
    b = embedder.conv_forward(p, np.roll(x, 500, axis=2))[0]
    assert abs(np.linalg.norm(a) - np.linalg.norm(b)) / np.linalg.norm(a) < 0.10


def test_checkpoint_round_trip_and_tamper(tmp_path):
    p = embedder.init_params(11)
    path = embedder.save_checkpoint(p, tmp_path / "m.json", config_hash="abc", meta={"fold": 1})
    q, doc = embedder.load_checkpoint(path, expect_config_hash="abc")
    assert q.digest() == p.digest() and doc["meta"]["fold"] == 1
    with pytest.raises(HashMismatch):
        embedder.load_checkpoint(path, expect_config_hash="other")
    import json
    d = json.loads(path.read_text())
    d["weights"][0][0] += 0.5
    path.write_text(json.dumps(d))
    with pytest.raises(HashMismatch):
        embedder.load_checkpoint(path)


def test_baseline_zero_and_determinism():
    z = VelocitySegment(np.zeros(5000), np.zeros(5000), "001", 1, 1, "TEX", 0)
    e = embedder.stat_baseline_embed(z)
    assert e.shape == (128,) and not e.any()
    s = VelocitySegment(*rand_x(1, 1, 5000)[0], "001", 1, 1, "TEX", 0)
    assert embedder.stat_baseline_embed(s).tobytes() == embedder.stat_baseline_embed(s).tobytes()


def test_baseline_sees_tremor_power(lowpass):
    import dataclasses
    high = dsp.make_highpass_complement(lowpass)
    base = synth.make_profile(0, 5)
    feats = []
    for power in (1e-5, 4e-4):
        prof = dataclasses.replace(base, tremor_power=power, blink_rate_hz=0.0)
        rec = synth.generate_recording(prof, 10.0, 1, jitter_scale=0.0)
        noise = dsp.apply_filter(rec, high)
        seg = features.recording_segments(noise, Band.NOISE)[0]
        e = embedder.stat_baseline_embed(seg)
        feats.append(e[embedder.BASELINE_BAND_SLICE])
    # the top bands (above 75 Hz) carry more power for the stronger tremor
    assert np.all(feats[1][-3:] > feats[0][-3:])
