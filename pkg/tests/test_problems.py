import numpy as np
import pytest

from atgfem.problems import (PROBLEMS, LinearProblem, get_problem, make_linear_nonspd, make_test1,
                             make_test2, make_test2_general, verify_manufactured, with_source_shift)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_manufactured_residual(name):
    # [DERIVED] strong-form residual of the exact solution, evaluated pointwise
    assert verify_manufactured(get_problem(name), samples=200) <= 1e-10


def test_hand_general_view_matches_derived():
    auto = make_test2().as_general()
    hand = make_test2_general()
    rng = np.random.default_rng(0)
    x, y, u = rng.uniform(-1, 1, (3, 50))
    z = rng.standard_normal((50, 2))
    for name in ("flux", "g", "a", "b", "c", "d"):
        assert np.allclose(getattr(auto, name)(x, y, u, z), getattr(hand, name)(x, y, u, z), atol=1e-14)
    assert verify_manufactured(hand) <= 1e-10


@pytest.mark.parametrize("factory", [make_test1, make_test2_general, lambda: make_test2().as_general(),
                                     lambda: make_linear_nonspd().as_general()])
def test_derivative_callbacks_match_finite_differences(factory):
    # [DERIVED] a = D_z flux, b = D_u flux, c = D_z g, d = D_u g by central differences
    p = factory()
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-1, 1, (2, 20))
    u = rng.uniform(-1, 1, 20)
    z = rng.standard_normal((20, 2))
    h = 1e-6
    du_f = (p.flux(x, y, u + h, z) - p.flux(x, y, u - h, z)) / (2 * h)
    du_g = (p.g(x, y, u + h, z) - p.g(x, y, u - h, z)) / (2 * h)
    assert np.allclose(p.b(x, y, u, z), du_f, atol=1e-6)
    assert np.allclose(p.d(x, y, u, z), du_g, atol=1e-6)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        dz_f = (p.flux(x, y, u, z + e) - p.flux(x, y, u, z - e)) / (2 * h)
        dz_g = (p.g(x, y, u, z + e) - p.g(x, y, u, z - e)) / (2 * h)
        assert np.allclose(p.a(x, y, u, z)[..., :, j], dz_f, atol=1e-6)
        assert np.allclose(p.c(x, y, u, z)[..., j], dz_g, atol=1e-6)


def test_test1_source_formula():
    # [PAPER] f = 2 pi^2 sin(pi x) sin(pi y) + sin^5(pi x) sin^5(pi y)
    p = make_test1()
    x, y = 0.3, -0.7
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    assert p.source(x, y) == pytest.approx(2 * np.pi ** 2 * s + s ** 5, rel=1e-15)
    assert p.mild.gamma(x, y, 2.0) == 32.0


def test_test2_coefficient():
    # [PAPER] -div((2 - u) grad u)
    p = make_test2()
    assert np.allclose(p.alpha(0.0, 0.0, np.array(0.5)), 1.5 * np.eye(2))


def test_linear_mild_view():
    p = make_linear_nonspd(reaction=2.0)
    m = p.as_mild()
    x = np.array([0.1, 0.2])
    assert np.allclose(m.gamma(x, x, np.array([1.0, 3.0])), [2.0, 6.0])
    assert not m.mildly_nonlinear
    assert isinstance(p, LinearProblem)


def test_unknown_problem_lists_ids():
    with pytest.raises(KeyError) as exc:
        get_problem("nope")
    assert "test1" in str(exc.value)


def test_source_shift_breaks_manufactured_solution():
    p = with_source_shift(make_test2(), 1.0)
    assert verify_manufactured(p) == pytest.approx(1.0, rel=1e-9)
