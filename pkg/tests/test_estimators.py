import numpy as np
import pytest
from scipy.linalg import expm
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from koopcast import data
from koopcast import model as km
from koopcast import spectral as sp
from koopcast.estimators import DMDForecaster, KoopmanForecaster
from koopcast.training import TrainConfig, fit


def rotation_data(N=40, omega=1.0, dt=0.25):
    t = dt * np.arange(N)
    return np.column_stack([np.cos(omega * t), np.sin(omega * t)]), t


def small_forecaster(**kw):
    params = dict(max_epochs=60, patience=20, lr=0.02, nu_start=-3, nu_end=3)
    params.update(kw)
    return KoopmanForecaster(**params)


def test_params_round_trip_through_clone():
    est = KoopmanForecaster(n_modes=4, hidden_sizes=(6,), lr=0.05, random_state=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(lr=0.1).lr == 0.1


def test_unfitted_estimator_refuses_to_predict():
    X, _ = rotation_data()
    with pytest.raises(NotFittedError):
        KoopmanForecaster().predict(X, 1.0)
    with pytest.raises(NotFittedError):
        DMDForecaster().forecast([1.0])


def test_fit_matches_library_training():
    X, t = rotation_data()
    est = small_forecaster(random_state=5).fit(X, t)
    m = km.init_model(2, 2, (4,), None, 5)
    series = data.TimeSeries(t, X)
    m.mean, m.scale = X.mean(axis=0), X.std(axis=0)
    ref, hist = fit(m, series, None, TrainConfig(nu_start=-3, nu_end=3, learning_rate=0.02, max_epochs=60, patience=20))
    assert est.history_ == hist
    np.testing.assert_array_equal(est.predict(X[:3], 0.5), km.forecast(ref, X[:3], 0.5))


def test_transform_shapes_and_round_trip():
    X, t = rotation_data()
    est = small_forecaster(n_modes=3).fit(X, t)
    G = est.transform(X)
    assert G.shape == (len(X), 3)
    np.testing.assert_allclose(est.inverse_transform(G), km.decode(est.model_, G))
    np.testing.assert_allclose(est.predict(X, 0.0), est.inverse_transform(G), atol=1e-12)


def test_default_times_are_sample_indices():
    X, _ = rotation_data(N=20, dt=1.0)
    a = small_forecaster(max_epochs=5).fit(X)
    b = small_forecaster(max_epochs=5).fit(X, np.arange(20.0))
    np.testing.assert_array_equal(a.predict(X, 1.0), b.predict(X, 1.0))


def test_forecast_starts_from_last_observation():
    X, t = rotation_data()
    est = small_forecaster().fit(X, t)
    later = t[-1] + np.array([0.5, 1.0])
    np.testing.assert_allclose(est.forecast(later), km.forecast_path(est.model_, X[-1], [0.5, 1.0]))


def test_score_is_negative_mse():
    X, t = rotation_data()
    est = small_forecaster().fit(X, t)
    pred = est.predict(X[:-1], 0.25)
    want = -np.mean(np.sum((pred - X[1:]) ** 2, axis=1))
    assert est.score(X[:-1], X[1:], tau=0.25) == pytest.approx(want)


def test_constraint_given_as_dict():
    c = sp.SpectralConstraint((sp.Fixed(0.0),), (sp.Fixed(1.0),))
    est = small_forecaster(constraint=c.to_dict(), max_epochs=3).fit(*rotation_data())
    assert est.spectrum_.r.tolist() == [0.0] and est.spectrum_.omega.tolist() == [1.0]


def test_column_count_checked():
    X, t = rotation_data()
    est = small_forecaster(max_epochs=2).fit(X, t)
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 3)), 1.0)
    with pytest.raises(ValueError):
        est.inverse_transform(np.ones((2, 5)))


def test_time_length_mismatch():
    X, t = rotation_data()
    with pytest.raises(ValueError):
        small_forecaster().fit(X, t[:-1])


def test_dmd_forecaster_recovers_linear_system():
    A = data.linear_test_matrix()
    dt = 0.1
    step = expm(A * dt)
    X = [np.array([1.0, 0.0])]
    for _ in range(39):
        X.append(step @ X[-1])
    X = np.array(X)
    est = DMDForecaster().fit(X, dt * np.arange(40))
    np.testing.assert_allclose(est.predict(X[:2], 0.3), (expm(A * 0.3) @ X[:2].T).T, atol=1e-9)
    spec = sorted(est.continuous_spectrum_, key=lambda p: p[1])
    want = sorted((l.real, l.imag) for l in np.linalg.eigvals(A))
    np.testing.assert_allclose(spec, want, atol=1e-8)
    np.testing.assert_allclose(est.forecast([4.0]), [expm(A * 0.1) @ X[-1]], atol=1e-9)
