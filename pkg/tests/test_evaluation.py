import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazeband import evaluation as ev
from gazeband.errors import DegenerateDistributions, EmptyScores, InsufficientDuration, MissingSession
from gazeband.evaluation import ScoreSet
from gazeband.features import VelocitySegment

from oracles import d_prime_oracle, eer_oracle, frr_at_far_oracle, sweep

G3 = [0.9, 0.8, 0.7]
I3 = [0.75, 0.2, 0.1]


def roc_of(g, i):
    return ev.compute_roc(ScoreSet(g, i))


def random_scores(rng):
    ng = int(rng.integers(2, 200))
    ni = int(rng.integers(2, 800))
    kind = rng.integers(0, 3)
    if kind == 0:
        g, i = rng.normal(1.0, 1.0, ng), rng.normal(0.0, 1.0, ni)
    elif kind == 1:
        # coarse values force many ties
        g, i = rng.integers(0, 6, ng) / 5.0, rng.integers(0, 4, ni) / 5.0
    else:
        g, i = rng.uniform(-1, 1, ng), rng.uniform(-1, 1, ni)
    return g, i


def test_worked_example():
    roc = roc_of(G3, I3)
    k = int(np.flatnonzero(roc.thresholds == 0.75)[0])
    # 0.72 lies between 0.75 and 0.7, so it behaves like threshold 0.75's successor 0.7 -> use direct counts
    far = np.mean(np.array(I3) >= 0.72)
    frr = np.mean(np.array(G3) < 0.72)
    assert far == pytest.approx(1 / 3) and frr == pytest.approx(1 / 3)
    assert roc.far[k] == pytest.approx(1 / 3) and roc.frr[k] == pytest.approx(1 / 3)
    assert ev.eer(roc) == pytest.approx(100 / 3, abs=1e-9)
    assert round(ev.eer(roc), 2) == 33.33
    assert ev.frr_at_far_point(roc, 0.3) * 100 == pytest.approx(100 / 3, abs=1e-9)


def test_roc_endpoints_and_monotonicity():
    rng = np.random.Generator(np.random.PCG64(0))
    roc = roc_of(rng.normal(1, 1, 50), rng.normal(0, 1, 70))
    assert roc.thresholds[0] == np.inf and roc.far[0] == 0 and roc.frr[0] == 1
    assert roc.thresholds[-1] == -np.inf and roc.far[-1] == 1 and roc.frr[-1] == 0
    assert np.all(np.diff(roc.far) >= 0) and np.all(np.diff(roc.frr) <= 0)
    assert np.all(np.diff(roc.thresholds) < 0)


def test_empty_scores():
    with pytest.raises(EmptyScores):
        roc_of([], [0.1])
    with pytest.raises(EmptyScores):
        ev.frr_at_far(ScoreSet([0.5], []))


def test_separated_scores():
    roc = roc_of([0.9, 0.95], [0.1, 0.2, 0.3])
    assert ev.eer(roc) == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        frr, _ = ev.frr_at_far(ScoreSet([0.9, 0.95], [0.1, 0.2, 0.3]), 1e-4)
    assert frr == 0.0


def test_identical_distributions_give_chance():
    rng = np.random.Generator(np.random.PCG64(1))
    e = ev.eer(roc_of(rng.normal(0, 1, 5000), rng.normal(0, 1, 5000)))
    assert abs(e - 50) <= 3
    s = ScoreSet(rng.normal(0, 1, 3000), rng.normal(0, 1, 3000))
    assert ev.d_prime(s) < 0.1


def test_d_prime_examples():
    a = 1 / math.sqrt(2)
    s = ScoreSet([1 - a, 1 + a], [-1 - a, -1 + a])
    assert ev.d_prime(s) == pytest.approx(2.0, rel=1e-12)
    assert ev.d_prime(ScoreSet([0, 1, 2], [0, 1, 2])) == 0.0
    with pytest.raises(DegenerateDistributions):
        ev.d_prime(ScoreSet([1, 1], [0, 0]))
    with pytest.raises(DegenerateDistributions):
        ev.d_prime(ScoreSet([1], [0, 2]))


def test_metrics_match_brute_force_on_random_sets():
    rng = np.random.Generator(np.random.PCG64(2024))
    for _ in range(50):
        g, i = random_scores(rng)
        roc = roc_of(g, i)
        pts = sweep(g, i)
        assert abs(ev.eer(roc) - eer_oracle(g, i, pts)) <= 1e-9
        for target in (1e-4, 0.01, 0.1, 0.5):
            got = 100 * ev.frr_at_far_point(roc, target)
            assert abs(got - frr_at_far_oracle(g, i, target, pts)) <= 1e-9
        assert ev.d_prime(ScoreSet(g, i)) == pytest.approx(d_prime_oracle(list(g), list(i)), rel=1e-12)


# a 1/16 grid keeps exp() strictly increasing in floating point
finite = st.integers(-80, 80).map(lambda k: k / 16)


@given(st.lists(finite, min_size=2, max_size=40), st.lists(finite, min_size=2, max_size=40),
       st.floats(-3, 3), st.floats(0.1, 10))
@settings(max_examples=80, deadline=None)
def test_invariances(g, i, shift, scale):
    s = ScoreSet(g, i)
    if np.std(g) == 0 and np.std(i) == 0:
        return
    base_eer = ev.eer(ev.compute_roc(s))
    base_d = ev.d_prime(s)
    # d' is shift and positive-scale invariant
    t = ScoreSet(np.asarray(g) * scale + shift, np.asarray(i) * scale + shift)
    assert ev.d_prime(t) == pytest.approx(base_d, rel=1e-6, abs=1e-9)
    # EER depends on ranks only
    m = ScoreSet(np.exp(np.asarray(g)), np.exp(np.asarray(i)))
    assert ev.eer(ev.compute_roc(m)) == pytest.approx(base_eer, abs=1e-9)
    assert 0 <= base_eer <= 100 and base_d >= 0


def test_score_all():
    a = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 2.0]])
    s = ev.score_all(a, a, ["x", "y", "z"])
    np.testing.assert_allclose(s.genuine, 1.0)
    np.testing.assert_allclose(s.impostor, 0.0, atol=1e-15)
    assert len(s.genuine) == 3 and len(s.impostor) == 6
    assert all(p != q for p, q in s.impostor_pairs)
    assert len(set(s.impostor_pairs)) == 6


def test_frr_bootstrap_is_seeded():
    rng = np.random.Generator(np.random.PCG64(4))
    enroll = rng.standard_normal((15, 8))
    auth = enroll + rng.normal(0, 0.8, enroll.shape)
    S = ev.cosine_matrix(enroll, auth)
    s = ev.score_all(enroll, auth)
    with pytest.warns(RuntimeWarning):
        a = ev.frr_at_far(s, 1e-4, S, 200, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = ev.frr_at_far(s, 1e-4, S, 200, seed=1)
        c = ev.frr_at_far(s, 1e-4, S, 200, seed=2)
        d = ev.frr_at_far(s, 1e-4)
    assert a == b and a[1] != c[1] and a[1] > 0
    assert math.isnan(d[1]) and d[0] == a[0]


def test_bootstrap_excludes_self_pairs():
    S = np.array([[1.0, 0.2, 0.3], [0.1, 1.0, 0.4], [0.0, 0.5, 1.0]])
    bs = ev._bootstrap_scores(S, np.array([0, 0, 2]))
    assert sorted(bs.genuine) == [1.0, 1.0, 1.0]
    # (0,0) duplicates are neither genuine twice-counted pairs nor impostors
    assert sorted(bs.impostor) == [0.0, 0.0, 0.3, 0.3]


def segs_for(subject, rnd, ses, n):
    return [VelocitySegment(np.full(50, i + 1.0), np.zeros(50), subject, rnd, ses, "TEX", i)
            for i in range(n)]


def test_template_windows():
    store = {("a", 1, 1, "TEX"): list(reversed(segs_for("a", 1, 1, 14)))}
    win = ev.template_windows(store, "a", 1, 1)
    assert [s.window_index for s in win] == list(range(12))
    with pytest.raises(MissingSession):
        ev.template_windows(store, "a", 1, 2)
    store[("a", 1, 2, "TEX")] = segs_for("a", 1, 2, 11)
    with pytest.raises(InsufficientDuration):
        ev.template_windows(store, "a", 1, 2)


def test_build_eval_sets():
    store = {}
    for s in ("a", "b", "c"):
        store[(s, 1, 1, "TEX")] = segs_for(s, 1, 1, 12)
        store[(s, 1, 2, "TEX")] = segs_for(s, 1, 2, 13)

    def embed(x):
        return x[:, 0, :4].astype(np.float64)

    enroll, auth = ev.build_eval_sets(store, ["a", "b", "c"], "short", embed)
    assert enroll.shape == (3, 4) and auth.shape == (3, 4)
    np.testing.assert_allclose(enroll[0], 6.5)
    with pytest.raises(MissingSession):
        ev.build_eval_sets(store, ["a"], "long", embed)


def test_shuffled_labels_are_chance():
    rng = np.random.Generator(np.random.PCG64(5))
    enroll = rng.standard_normal((20, 16))
    auth = enroll + rng.normal(0, 0.3, enroll.shape)
    real = ev.eer(ev.compute_roc(ev.score_all(enroll, auth)))
    assert real < 5
    assert abs(ev.shuffled_label_eer(enroll, auth, 200, seed=0) - 50) <= 5


def test_evaluate_and_table():
    rng = np.random.Generator(np.random.PCG64(6))
    enroll = rng.standard_normal((10, 8))
    auth = enroll + rng.normal(0, 1.0, enroll.shape)
    rep, scores, roc = ev.evaluate_centroids(enroll, auth, "signal", "short", resamples=20)
    assert rep.n_genuine == 10 and rep.n_impostor == 90 and rep.far_resolution_warning
    table = ev.render_table([rep])
    lines = table.splitlines()
    assert len(lines) == 5 and "short-term signal" in lines[0]
    assert lines[2].startswith("EER (%)")
