import math

import numpy as np
import pytest

import homoode


def test_benchmark_equation_root():
    root, nfe = homoode.solve_benchmark_equation(z0=6.0)
    assert abs(root - 6.4217) < 1e-3
    assert nfe > 0


def test_solve_callable_residual():
    sol, nfe, trace = homoode.solve(lambda z: z * z - 4.0, np.array([1.0]))
    assert abs(sol[0] - 2.0) < 1e-6
    assert trace[0][0] == 0.0  # path starts at lambda = 0
    assert trace[-1][0] == pytest.approx(1.0, abs=1e-9)


def test_equilibrium_solvers_agree():
    f = lambda z: np.cos(z)
    zn, _, rn = homoode.newton_solve(f, np.array([0.5]), tol=1e-12)
    za, _, ra = homoode.fixed_point_solve(f, np.array([0.5]), tol=1e-12, max_iter=500)
    assert abs(zn[0] - 0.7390851332151607) < 1e-10
    assert abs(zn[0] - za[0]) < 1e-8
    assert rn < 1e-12 and ra < 1e-12


def test_lambda_recovery():
    f_norms = [0.6 + 0.3 * math.sin(6 * t / 200.0) for t in range(201)]
    v = homoode.solve_v(f_norms)
    lam = homoode.recover_lambda(f_norms, v)
    assert all(b >= a for a, b in zip(lam, lam[1:]))
    assert abs(lam[-1] - 1.0) < 1e-9


def test_synth_circles():
    x, y = homoode.synth_circles(100, noise=0.0, seed=3)
    assert x.shape == (100, 2)
    radii = np.linalg.norm(x, axis=1)
    inner = radii < 0.75
    assert sum(y) == 50
    assert all((y[i] == 0) == inner[i] for i in range(100))


def test_model_predict_and_fit():
    m = homoode.Model(kind="homo_ode", arch="mlp", in_features=2, channels=8, num_classes=2)
    x, y = homoode.synth_circles(64, noise=0.05, seed=1)
    logits, nfe = m.predict(x)
    assert logits.shape == (64, 2)
    assert nfe > 0
    rows = m.fit(x, y, epochs=2, batch_size=32)
    assert len(rows) == 2
    assert rows[-1]["split"] == "train"
    assert math.isfinite(rows[-1]["loss"])


def test_errors_are_mapped():
    with pytest.raises(ValueError):
        homoode.synth_circles(7)  # odd n cannot be balanced
    with pytest.raises(ValueError):
        homoode.solve(lambda z: z, np.array([0.0]), kind="bogus")
