import numpy as np
import pytest

from arsynth.analysis import (
    LinearSystem,
    check_dissipativity,
    discrete_lyapunov,
    frequency_response,
    h2_norm,
    h2_norm_lmi,
    hinf_norm,
    spectral_radius,
    write_frequency_csv,
)
from arsynth.errors import DimensionError, UnstableSystemError
from arsynth.synthesis import SupplyRate

from conftest import random_stable

SCALAR = LinearSystem([[0.5]], [[1.0]], [[1.0]], [[0.0]])


def test_spectral_radius_cases():
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    assert np.isclose(spectral_radius(np.diag([0.5, -0.9])), 0.9)
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        A = rng.standard_normal((n, n))
        roots = np.roots(np.poly(A))
        assert abs(spectral_radius(A) - np.abs(roots).max()) <= 1e-8 * max(1.0, np.abs(roots).max())


def test_lyapunov_solution():
    rng = np.random.default_rng(1)
    sys = random_stable(rng, 6)
    Q = sys.B @ sys.B.T
    X = discrete_lyapunov(sys.A, Q)
    assert np.abs(sys.A @ X @ sys.A.T - X + Q).max() <= 1e-10


def test_h2_trivial():
    assert np.isclose(h2_norm(LinearSystem([[0.0]], [[1.0]], [[1.0]], [[0.0]])), 1.0)
    D = np.array([[1.0, 2.0], [0.0, 3.0]])
    assert np.isclose(h2_norm(LinearSystem(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((2, 1)), D)),
                      np.linalg.norm(D, "fro"))
    with pytest.raises(UnstableSystemError):
        h2_norm(LinearSystem([[1.5]], [[1.0]], [[1.0]], [[0.0]]))


def test_h2_impulse_response_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        sys = random_stable(rng, int(rng.integers(1, 8)))
        total = np.linalg.norm(sys.D, "fro") ** 2
        Ak = np.eye(sys.n)
        for _ in range(5000):
            h = sys.C @ Ak @ sys.B
            total += np.linalg.norm(h, "fro") ** 2
            Ak = sys.A @ Ak
            if np.abs(Ak).max() < 1e-14:
                break
        assert abs(h2_norm(sys) - np.sqrt(total)) <= 1e-8 * max(1.0, np.sqrt(total))


def test_h2_gramian_vs_lmi():
    """Oracle pair: gramian value against the trace-minimizing LMI, 50 systems up to dimension 10."""
    rng = np.random.default_rng(3)
    for k in range(50):
        sys = random_stable(rng, 1 + k % 10, rho=0.8)
        g = h2_norm(sys)
        assert abs(h2_norm_lmi(sys) - g) <= 1e-6 * max(1.0, g)


def test_hinf_cases():
    assert np.isclose(hinf_norm(SCALAR), 2.0, rtol=1e-6)
    D = np.array([[1.0, 2.0], [0.0, 3.0]])
    static = LinearSystem(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((2, 1)), D)
    resp = frequency_response(static, np.linspace(0, np.pi, 7))
    assert np.allclose(resp, np.linalg.norm(D, 2))
    # resonant peak off the grid
    r, th = 0.995, 1.0
    A = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    sys = LinearSystem(A, [[1.0], [0.0]], [[1.0, 0.0]], [[0.0]])
    om = np.linspace(0.98, 1.02, 200001)
    fine = frequency_response(sys, om).max()
    assert abs(hinf_norm(sys) - fine) <= 1e-4 * fine


def test_dissipativity_scalar():
    ok = check_dissipativity(SCALAR, SupplyRate.hinf(3.0, 1, 1))
    assert ok.feasible and ok.P is not None
    bad = check_dissipativity(SCALAR, SupplyRate.hinf(1.5, 1, 1))
    assert not bad.feasible
    with pytest.raises(DimensionError):
        check_dissipativity(SCALAR, SupplyRate.hinf(3.0, 2, 1))


def test_dissipativity_given_P():
    res = check_dissipativity(SCALAR, SupplyRate.hinf(3.0, 1, 1))
    again = check_dissipativity(SCALAR, SupplyRate.hinf(3.0, 1, 1), P=res.P)
    assert again.feasible and again.margin > 0


def test_dissipativity_bisection_matches_norm():
    rng = np.random.default_rng(4)
    for _ in range(8):
        sys = random_stable(rng, int(rng.integers(2, 5)), rho=0.7)
        g = hinf_norm(sys)
        up = check_dissipativity(sys, SupplyRate.hinf(1.01 * g, sys.B.shape[1], sys.C.shape[0]))
        down = check_dissipativity(sys, SupplyRate.hinf(0.99 * g, sys.B.shape[1], sys.C.shape[0]))
        assert up.feasible and not down.feasible


def test_frequency_csv(tmp_path):
    om = np.linspace(0, np.pi, 5)
    path = write_frequency_csv(tmp_path / "f.csv", om, frequency_response(SCALAR, om), bound=2.5)
    lines = path.read_text().splitlines()
    assert lines[0] == "omega,sigma_max,bound"
    assert len(lines) == 6
