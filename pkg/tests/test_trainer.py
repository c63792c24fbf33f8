import numpy as np
import pytest

from duelgan import trainer as tr
from duelgan.metrics import histogram2d, mode_coverage, reference_histogram, symmetric_kl
from duelgan.nets import MlpSpec, mlp_init
from duelgan.objectives import DuelConfig
from duelgan.synth import ring_mixture, sample_mixture

RING = ring_mixture()


def small(**kw):
    base = dict(m=32, noise_dim=8, g_hidden=(16, 16), d_hidden=(16, 16))
    base.update(kw)
    return DuelConfig(**base)


def same_params(a, b):
    return all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))


# -- optimizer ---------------------------------------------------------------------

def _params():
    return mlp_init(MlpSpec((2, 3, 1), "tanh", "sigmoid", 0))


def test_adam_first_step_has_magnitude_lr():
    p = _params()
    g = [np.random.default_rng(0).normal(size=a.shape) for a in p.arrays()]
    new, st = tr.adam_update(p, g, tr.AdamState.zeros_for(p), 1e-3)
    for a, b, gi in zip(p.arrays(), new.arrays(), g):
        np.testing.assert_allclose(b - a, -1e-3 * gi / (np.abs(gi) + 1e-8), rtol=1e-9)
    assert st.t == 1


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = _params()
    st = tr.AdamState([np.ones_like(a) for a in p.arrays()], [np.ones_like(a) for a in p.arrays()], 3)
    new, st2 = tr.adam_update(p, [np.zeros_like(a) for a in p.arrays()], st, 1e-3, 0.5, 0.999)
    np.testing.assert_allclose(st2.m[0], 0.5)
    np.testing.assert_allclose(st2.v[0], 0.999)
    # zero gradient with nonzero momentum still moves; with fresh moments it must not
    new0, _ = tr.adam_update(p, [np.zeros_like(a) for a in p.arrays()], tr.AdamState.zeros_for(p), 1e-3)
    assert same_params(new0, p)


def test_adam_deterministic():
    p = _params()
    g = [np.full(a.shape, 0.3) for a in p.arrays()]
    a, _ = tr.adam_update(p, g, tr.AdamState.zeros_for(p), 1e-4)
    b, _ = tr.adam_update(p, g, tr.AdamState.zeros_for(p), 1e-4)
    assert same_params(a, b)


def test_adam_rejects_non_finite_gradient_with_context():
    p = _params()
    g = [np.zeros_like(a) for a in p.arrays()]
    g[2] = g[2].copy()
    g[2].flat[0] = np.nan
    with pytest.raises(tr.TrainingError, match=r"iteration 7, parameter index 2"):
        tr.adam_update(p, g, tr.AdamState.zeros_for(p), 1e-4, iteration=7)


def test_adam_shape_mismatch():
    p = _params()
    with pytest.raises(ValueError):
        tr.adam_update(p, [np.zeros((1, 1))] * 6, tr.AdamState.zeros_for(p), 1e-4)


# -- train_step ---------------------------------------------------------------------------

def test_step_is_pure_and_advances_iter():
    s = tr.init_state(small(), RING, 10, 0)
    before = tr.checkpoint_bytes(s)
    s1, summary = tr.train_step(s)
    assert tr.checkpoint_bytes(s) == before
    assert s1.iter == 1 and summary["iter"] == 0
    assert summary["alpha"] == 0.0 and summary["beta"] == 0.0


def test_optimizer_shapes_mirror_params():
    s, _ = tr.train_step(tr.init_state(small(), RING, 10, 0))
    for net in ("g", "d1", "d2"):
        params, opt = getattr(s, f"params_{net}"), getattr(s, f"opt_{net}")
        assert [a.shape for a in params.arrays()] == [a.shape for a in opt.m] == [a.shape for a in opt.v]
    assert (s.opt_g.t, s.opt_d1.t, s.opt_d2.t) == (1, 1, 1)


def test_vanilla_leaves_second_discriminator_alone():
    s = tr.init_state(small(variant="vanilla", k=2), RING, 10, 0)
    s1, _ = tr.train_step(s)
    assert same_params(s1.params_d2, s.params_d2)
    assert s1.opt_d2.t == 0
    assert s1.opt_d1.t == 2 and not same_params(s1.params_d1, s.params_d1)


@pytest.mark.parametrize("k", [1, 3])
def test_first_step_duel_term_contributes_nothing(k):
    # at iteration 0 the triangular schedule gives beta = 0
    duel, _ = tr.train_step(tr.init_state(small(k=k), RING, 10, 4))
    plain, _ = tr.train_step(tr.init_state(small(k=k, variant="vanilla"), RING, 10, 4))
    assert same_params(duel.params_d1, plain.params_d1)


@pytest.mark.parametrize("order", ["simultaneous", "sequential"])
def test_beta_zero_discriminator_update_matches_vanilla(order):
    cfg = small(k=2, schedule="constant", beta_max=0.0, alpha_max=0.7, update_order=order)
    s_duel = tr.init_state(cfg, RING, 10, 9)
    s_van = tr.init_state(small(k=2, variant="vanilla"), RING, 10, 9)
    # give both the same non-initial generator so the batch is not trivial
    s_duel, _ = tr.train_step(s_duel)
    s_van.params_g, s_van.params_d1, s_van.opt_d1 = s_duel.params_g, s_duel.params_d1, s_duel.opt_d1
    s_van.rngs["data"], s_van.rngs["noise"] = s_duel.copy().rngs["data"], s_duel.copy().rngs["noise"]
    a, _ = tr.train_step(s_duel)
    b, _ = tr.train_step(s_van)
    assert same_params(a.params_d1, b.params_d1)


def test_sequential_differs_from_simultaneous():
    sim = tr.init_state(small(schedule="constant"), RING, 10, 2)
    seq = tr.init_state(small(schedule="constant", update_order="sequential"), RING, 10, 2)
    a, sa = tr.train_step(sim, record_batches=True)
    b, sb = tr.train_step(seq, record_batches=True)
    assert same_params(a.params_d1, b.params_d1)
    # D2 sees the pre-update D1 in one order and the post-update D1 in the other
    np.testing.assert_array_equal(sa["batches"][0]["peer_for_d1"], sb["batches"][0]["peer_for_d1"])
    assert not np.array_equal(sa["batches"][0]["peer_for_d2"], sb["batches"][0]["peer_for_d2"])


def test_peer_init_modes():
    copy = tr.init_state(small(peer_init="copy"), RING, 10, 0)
    redraw = tr.init_state(small(), RING, 10, 0)
    assert same_params(copy.params_d1, copy.params_d2)
    assert not same_params(redraw.params_d1, redraw.params_d2)


def test_d2gan_heads_are_positive_and_train():
    s = tr.init_state(small(variant="d2gan"), RING, 10, 0)
    assert s.params_d1.spec.output_activation == "softplus"
    s1, summary = tr.train_step(s)
    assert np.isfinite(summary["d_value"]) and np.isfinite(summary["g_value"])
    assert not same_params(s1.params_d2, s.params_d2)


def test_discriminator_tapes_only_see_discriminator_leaves():
    s = tr.init_state(small(), RING, 10, 0)
    batch = np.random.default_rng(0).normal(size=(64, 2))
    tape, value = tr.duel_discriminator_value(s.params_d1, batch, np.full(64, 0.7),
                                              np.zeros((64, 2), int), 0.3, 0.5, 1e-6)
    assert all(name.startswith("d.") for name in tape.leaves)
    assert set(tape.backward(value)) == set(s.params_d1.names("d"))


def test_generator_step_does_not_touch_discriminators(monkeypatch):
    # freeze the D updates, then check the G step changes only G
    s = tr.init_state(small(), RING, 10, 0)
    monkeypatch.setattr(tr, "_ascend", lambda p, o, *a: (p, o))
    s1, _ = tr.train_step(s)
    assert same_params(s1.params_d1, s.params_d1) and same_params(s1.params_d2, s.params_d2)
    assert not same_params(s1.params_g, s.params_g)


def test_small_lr_steps_ascend_on_the_same_batch():
    cfg = small(lr=1e-5, schedule="constant")
    s = tr.init_state(cfg, RING, 200, 1)
    ups, total = 0, 0
    for _ in range(40):
        s, summary = tr.train_step(s, record_batches=True)
        b = summary["batches"][-1]
        for params, peer, pairs, old in ((s.params_d1, b["peer_for_d1"], b["pairs1"], summary["d1_value"]),
                                         (s.params_d2, b["peer_for_d2"], b["pairs2"], summary["d2_value"])):
            _, v = tr.duel_discriminator_value(params, b["batch"], peer, pairs, summary["alpha"],
                                               summary["beta"], cfg.clamp_eps)
            ups += float(v.value) >= old
            total += 1
    assert ups >= 0.95 * total


# -- evaluation and full runs ----------------------------------------------------------------------

def test_zero_generator_collapses_to_origin():
    s = tr.init_state(small(), RING, 10, 0)
    s.params_g = s.params_g.zeros_like()
    rec, samples = tr.evaluate(s)
    assert rec.modes_captured <= 1
    np.testing.assert_array_equal(samples, 0.0)


def test_exact_samples_reach_metric_floor():
    pts = sample_mixture(RING, 10_000, 11)
    assert symmetric_kl(reference_histogram(RING), histogram2d(pts)) < 0.05
    assert mode_coverage(pts, RING)[0] == 8


def test_record_count_and_determinism():
    cfg = small()
    a = tr.train(cfg, RING, 23, 5, seed=3)
    b = tr.train(cfg, RING, 23, 5, seed=3)
    assert [r.iter for r in a.records] == [0, 5, 10, 15, 20]
    assert len(a.records) == 23 // 5 + 1
    assert a.records == b.records
    assert tr.checkpoint_bytes(a.state) == tr.checkpoint_bytes(b.state)


def test_eval_cadence_does_not_change_training():
    a = tr.train(small(), RING, 12, 3, seed=5)
    b = tr.train(small(), RING, 12, 12, seed=5)
    assert same_params(a.state.params_g, b.state.params_g)
    assert same_params(a.state.params_d2, b.state.params_d2)


def test_metrics_record_rejects_non_finite():
    with pytest.raises(tr.TrainingError):
        tr.MetricsRecord(0, float("nan"), 0, 0, 0, 0, 0, 0, 0, 0, 0)


def test_train_validates_arguments():
    with pytest.raises(ValueError):
        tr.train(small(), RING, 0, 1, 0)
    with pytest.raises(ValueError):
        tr.train(small(), RING, 5, 0, 0)


def test_step_failure_reports_last_checkpoint(tmp_path, monkeypatch):
    real_step = tr.train_step

    def flaky(state, *a, **kw):
        if state.iter == 3:
            raise tr.TrainingError("non-finite D1 objective at iteration 3")
        return real_step(state, *a, **kw)

    monkeypatch.setattr(tr, "train_step", flaky)
    with pytest.raises(tr.TrainingError, match="iter_0000002.ckpt"):
        tr.train(small(), RING, 6, 2, 0, checkpoint_dir=str(tmp_path), checkpoint_every=2)
    assert (tmp_path / "iter_0000002.ckpt").exists()


# -- checkpoints ---------------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["duelgan", "vanilla", "d2gan"])
def test_checkpoint_round_trip(variant, tmp_path):
    s = tr.init_state(small(variant=variant), RING, 10, 8)
    s, _ = tr.train_step(s)
    path = str(tmp_path / "x.ckpt")
    tr.save_checkpoint(s, path)
    back = tr.load_checkpoint(path)
    assert tr.checkpoint_bytes(back) == tr.checkpoint_bytes(s)
    assert back.config == s.config and back.iter == s.iter
    a, _ = tr.train_step(s)
    b, _ = tr.train_step(back)
    assert tr.checkpoint_bytes(a) == tr.checkpoint_bytes(b)


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(ValueError):
        tr.load_checkpoint(b"NOTACKPT" + bytes(20))
    good = tr.checkpoint_bytes(tr.init_state(small(), RING, 10, 0))
    with pytest.raises(ValueError):
        tr.load_checkpoint(good[:-8])
