import numpy as np
import pytest
from conftest import central_difference, relative_error

from koopcast import model as km
from koopcast import spectral as sp
from koopcast import training as tr
from koopcast.baselines import init_linear_model
from koopcast.data import DegenerateDataError, TimeSeries


def rotating_series(N=40, omega=1.0, dt=0.25):
    t = dt * np.arange(N)
    return TimeSeries(t, np.column_stack([np.cos(omega * t), np.sin(omega * t)]), "rotation")


def brute_force_pairs(N, nu_start, nu_end):
    """Same index set as ``loss_pairs``, enumerated from the one-based bounds by hand."""
    pairs = []
    for nu in range(nu_start, nu_end + 1):
        for n in range(1, N + 1):  # one-based
            if max(1, 1 - nu) <= n <= min(N - nu, N):
                pairs.append((n - 1, n - 1 + nu))
    return sorted(pairs)


# -- objective -------------------------------------------------------------------


def test_three_points_give_seven_terms():
    src, dst = tr.loss_pairs(3, -1, 1)
    assert len(src) == 7
    assert sorted(zip(src, dst)) == brute_force_pairs(3, -1, 1)


@pytest.mark.parametrize("N,a,b", [(6, -10, 10), (20, -3, 5), (5, 0, 0), (8, 2, 4), (8, -4, -2)])
def test_pairs_match_brute_force(N, a, b):
    src, dst = tr.loss_pairs(N, a, b)
    assert sorted(zip(src.tolist(), dst.tolist())) == brute_force_pairs(N, a, b)
    assert np.all((src >= 0) & (src < N) & (dst >= 0) & (dst < N))


def test_loss_terms_brute_force():
    m = km.init_model(2, 2, rng_seed=1)
    s = rotating_series(N=7)
    want = 0.0
    for n, k in brute_force_pairs(7, -2, 3):
        pred = km.forecast(m, s.values[n], s.times[k] - s.times[n])
        want += float(np.sum((pred - s.values[k]) ** 2))
    assert tr.multistep_loss(m, s, -2, 3) == pytest.approx(want, rel=1e-12)


def test_identity_on_constant_series_has_zero_loss():
    m = init_linear_model(2, sp.SpectralConstraint((sp.Fixed(0.0),), (sp.Fixed(0.0),)), 0)
    s = TimeSeries(np.arange(6.0), np.tile([1.5, -0.5], (6, 1)))
    assert tr.multistep_loss(m, s, -3, 3) == pytest.approx(0.0, abs=1e-25)


def test_zero_range_is_auto_reconstruction():
    m = km.init_model(2, 2, rng_seed=2)
    s = rotating_series(N=10)
    recon = km.decode(m, km.encode(m, s.values))
    assert tr.multistep_loss(m, s, 0, 0) == pytest.approx(float(np.sum((recon - s.values) ** 2)), rel=1e-12)


def test_backcast_terms_add_to_the_loss():
    m = km.init_model(2, 2, rng_seed=3)
    s = rotating_series(N=12)
    with_back = tr.multistep_loss(m, s, -2, 4)
    forward_only = tr.multistep_loss(m, s, 0, 4)
    backcast_only = tr.multistep_loss(m, s, -2, -1)
    assert with_back > forward_only
    assert with_back == pytest.approx(forward_only + backcast_only, rel=1e-12)


def test_no_pairs_is_an_error():
    s = rotating_series(N=3)
    with pytest.raises(DegenerateDataError):
        tr.multistep_loss(km.init_model(2, 2), s, 5, 6)


def test_loss_gradient_matches_finite_differences():
    c = sp.SpectralConstraint((sp.Free(-0.1),), (sp.Free(0.8),))
    m = km.init_model(2, 2, constraint=c, rng_seed=4)
    s = rotating_series(N=6)
    _, grads = tr.loss_and_grad(m, s, -10, 10)
    for name, p in m.params().items():
        fd = central_difference(lambda: tr.multistep_loss(m, s, -10, 10), p.value)
        assert relative_error(grads[name], fd) < 1e-4, name


# -- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    cfg = tr.TrainConfig()
    params = {"x": np.array([1.0, -2.0])}
    new, _ = tr.adam_step(params, {"x": np.zeros(2)}, tr.AdamState(), cfg)
    np.testing.assert_array_equal(new["x"], params["x"])


def test_adam_first_step_closed_form():
    cfg = tr.TrainConfig(learning_rate=0.01)
    new, state = tr.adam_step({"x": np.array(0.0)}, {"x": np.array(1.0)}, tr.AdamState(), cfg)
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert float(new["x"]) == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_does_not_modify_inputs():
    x = np.array([1.0])
    tr.adam_step({"x": x}, {"x": np.array([3.0])}, tr.AdamState(), tr.TrainConfig())
    assert x[0] == 1.0


def test_adam_decreases_a_quadratic():
    cfg = tr.TrainConfig(learning_rate=0.1)
    theta, state = {"x": np.array(2.0)}, tr.AdamState()
    losses = [4.0]
    for _ in range(2):
        theta, state = tr.adam_step(theta, {"x": 2 * theta["x"]}, state, cfg)
        losses.append(float(theta["x"] ** 2))
    assert losses[0] > losses[1] > losses[2]


# -- splitting -----------------------------------------------------------------------


@pytest.mark.parametrize("N,sizes", [(100, (20, 10, 70)), (10, (2, 1, 7)), (500, (100, 50, 350))])
def test_split_sizes(N, sizes):
    parts = tr.split_series(rotating_series(N=N))
    assert tuple(len(p) for p in parts) == sizes
    np.testing.assert_array_equal(np.concatenate([p.times for p in parts]), rotating_series(N=N).times)


def test_split_with_empty_validation_fails():
    with pytest.raises(DegenerateDataError):
        tr.split_series(rotating_series(N=4))


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(nu_start=3, nu_end=1)
    with pytest.raises(ValueError):
        tr.TrainConfig(learning_rate=0.0)
    assert tr.TrainConfig.from_dict(tr.TrainConfig().to_dict()) == tr.TrainConfig()


# -- training loop -----------------------------------------------------------------------


def test_zero_epochs_returns_initial_model():
    m = km.init_model(2, 2, rng_seed=5)
    before = m.get_state()
    out, hist = tr.fit(m, rotating_series(20), None, tr.TrainConfig(max_epochs=0))
    assert len(hist) == 0
    for k, v in out.get_state().items():
        np.testing.assert_array_equal(v, before[k])


def test_rotation_loss_drops_tenfold():
    c = sp.SpectralConstraint((sp.Fixed(0.0),), (sp.Free(0.0),))
    m = km.init_model(2, 2, constraint=c, rng_seed=0)
    s = rotating_series(N=40, omega=1.0)
    _, hist = tr.fit(m, s, None, tr.TrainConfig(max_epochs=500))
    assert min(hist.train_loss) <= hist.train_loss[0] / 10


def test_training_is_deterministic():
    s = rotating_series(N=30)
    runs = []
    for _ in range(2):
        m = km.init_model(2, 2, rng_seed=11)
        _, h = tr.train(m, s, tr.TrainConfig(max_epochs=40))
        runs.append(h)
    assert runs[0] == runs[1]


def test_fixed_entries_never_move():
    c = sp.SpectralConstraint((sp.Fixed(0.0),), (sp.Fixed(0.75),))
    m = km.init_model(2, 2, constraint=c, rng_seed=1)
    _, hist = tr.fit(m, rotating_series(20), None, tr.TrainConfig(max_epochs=30))
    assert all(r == [0.0] for r in hist.r)
    assert all(w == [0.75] for w in hist.omega)


def test_returned_model_is_the_best_validation_snapshot():
    s = rotating_series(N=60, omega=1.3)
    m = km.init_model(2, 2, rng_seed=6)
    train_part, val_part, _ = tr.split_series(s, (0.5, 0.2, 0.3))
    cfg = tr.TrainConfig(max_epochs=80, patience=5, learning_rate=0.05)
    best, hist = tr.fit(m, train_part, val_part, cfg)
    got = tr.multistep_loss(best, val_part, cfg.nu_start, cfg.nu_end)
    assert got == pytest.approx(min(hist.val_loss), rel=1e-12)
    assert got <= hist.val_loss[-1]


def test_patience_stops_early():
    s = rotating_series(N=60)
    m = km.init_model(2, 2, rng_seed=6)
    train_part, val_part, _ = tr.split_series(s, (0.5, 0.2, 0.3))
    _, hist = tr.fit(m, train_part, val_part, tr.TrainConfig(max_epochs=5000, patience=3, learning_rate=0.5))
    assert hist.stop_reason == "patience"
    assert len(hist) == hist.best_epoch + 4


def test_train_standardizes_on_training_part():
    s = rotating_series(N=50)
    s = TimeSeries(s.times, 3.0 * s.values + 7.0)
    m = km.init_model(2, 2)
    out, _ = tr.train(m, s, tr.TrainConfig(max_epochs=1))
    train_part, _, _ = tr.split_series(s)
    np.testing.assert_allclose(out.mean, train_part.values.mean(axis=0))
    np.testing.assert_allclose(out.scale, train_part.values.std(axis=0))


def test_conditioning_failure_aborts_with_history():
    m = km.init_model(2, 2)
    m.basis_U.value = np.array([[1.0], [1.0]])
    m.basis_Z.value = np.array([[1.0], [1.0]])
    with pytest.raises(tr.TrainingAborted) as info:
        tr.fit(m, rotating_series(20), None, tr.TrainConfig(max_epochs=3))
    assert info.value.model is m
    assert "conditioning" in info.value.history.stop_reason


def test_history_csv(tmp_path):
    m = km.init_model(2, 2)
    _, hist = tr.fit(m, rotating_series(20), None, tr.TrainConfig(max_epochs=3))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,r1,omega1"
    assert len(lines) == 4
