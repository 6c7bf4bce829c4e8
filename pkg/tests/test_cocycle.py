import math
import time

import numpy as np

from linconj import cocycle
from linconj.system import builtin_scenario, load_config_dict


def test_linear_transit_oracle(exm_discrete):
    # A = diag(0.5, 1, 1, 1, 2) constant, so A(3,1) = A^2
    T = cocycle.linear_transit(exm_discrete, 3, 1)
    assert np.allclose(T, np.diag([0.25, 1, 1, 1, 4]), atol=0, rtol=0)
    back = cocycle.linear_transit(exm_discrete, 1, 3)
    assert np.allclose(back @ T, np.eye(5), atol=1e-14)


def test_scalar_transit_powers(scalar_oracle):
    for n in (0, 1, 5, 9):
        T = cocycle.linear_transit(scalar_oracle, n, 0)
        assert abs(T[0, 0] - 0.5 ** n) < 1e-15


def test_cocycle_algebra_many_triples(exm_discrete):
    rng = np.random.default_rng(11)
    t0 = time.time()
    worst = 0.0
    for _ in range(500):
        m, n, p = sorted(rng.integers(0, 40, size=3))
        order = rng.permutation([m, n, p])
        a, b, c = int(order[0]), int(order[1]), int(order[2])
        left = cocycle.linear_transit(exm_discrete, a, b) @ \
            cocycle.linear_transit(exm_discrete, b, c)
        right = cocycle.linear_transit(exm_discrete, a, c)
        worst = max(worst, float(np.abs(left - right).max()))
    assert worst <= 1e-10
    assert time.time() - t0 < 5.0


def test_nonlinear_roundtrip(exm_discrete):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(0, 15))
        m = n + int(rng.integers(1, 6))
        x = rng.uniform(-5, 5, size=5)
        y = cocycle.nonlinear_transit(exm_discrete, m, n, x)
        back = cocycle.nonlinear_transit(exm_discrete, n, m, y)
        worst = max(worst, float(np.abs(back - x).max()))
    assert worst <= 1e-8


def test_inverse_step_residual_contract(exm_discrete):
    rng = np.random.default_rng(9)
    for _ in range(20):
        y = rng.uniform(-10, 10, size=5)
        n = int(rng.integers(0, 10))
        x, res = cocycle.nonlinear_inverse_step(exm_discrete, n, y, tol_inv=1e-12)
        assert res <= 1e-12 * max(1.0, np.linalg.norm(y))
        fwd = cocycle.nonlinear_step(exm_discrete, n, x)
        assert np.linalg.norm(fwd - y) <= 1e-11 * max(1.0, np.linalg.norm(y))


def test_orbit_table_invariants(exm_discrete):
    x = np.array([1.0, -2.0, 0.5, 3.0, -1.0])
    table = cocycle.orbit_table(exm_discrete, 4, x, 0, 12, with_nonlinear=True)
    assert table.times[0] == 0 and table.times[-1] == 12
    assert np.array_equal(table.linear[4], x)
    for j in range(12):
        A = exm_discrete.linear.step(j)
        assert np.allclose(table.linear[j + 1], A @ table.linear[j],
                           rtol=1e-13, atol=1e-13)
        step = cocycle.nonlinear_step(exm_discrete, j, table.nonlinear[j])
        assert np.allclose(table.nonlinear[j + 1], step, rtol=1e-9, atol=1e-9)


def _scalar_ct():
    cfg = {"system": {"kind": "continuous", "dimension": 1,
                      "linear": {"form": "constant-diagonal", "values": [-1.0]},
                      "perturbation": [{"component": 1, "family": "constant",
                                        "amplitude": 0.3}]},
           "decomposition": {"scales": [{"label": 1, "class": "stable",
                                         "coordinates": [1]}]},
           "envelopes": [{"scale": 1, "lambda": 0.005,
                          "nu": {"form": "constant", "value": 0.3},
                          "mu": {"form": "constant", "value": 0.0}}],
           "solver": {"t-max": 10.0}}
    return load_config_dict(cfg, name="scalar-ct")


def test_ct_linear_transit_exponential():
    b = _scalar_ct()
    got = cocycle.ct_linear_transit(b, 1.0, 0.0, np.array([1.0]))
    assert abs(got[0] - math.exp(-1.0)) < 1e-8


def test_ct_nonlinear_transit_closed_form():
    # x' = -x + 0.3 from x(0) = 1 gives x(1) = 0.3 + 0.7 e^{-1}
    b = _scalar_ct()
    got = cocycle.ct_nonlinear_transit(b, 1.0, 0.0, np.array([1.0]))
    assert abs(got[0] - (0.3 + 0.7 * math.exp(-1.0))) < 1e-8


def test_ct_transit_group_property(exm_continuous):
    x = np.array([0.3, -1.0, 2.0, 0.7, -0.2])
    mid = cocycle.ct_nonlinear_transit(exm_continuous, 1.2, 0.0, x)
    far = cocycle.ct_nonlinear_transit(exm_continuous, 2.0, 1.2, mid)
    direct = cocycle.ct_nonlinear_transit(exm_continuous, 2.0, 0.0, x)
    assert np.linalg.norm(far - direct) < 1e-9


def test_ct_backward_transit_inverts(exm_continuous):
    x = np.array([1.0, 0.5, -0.5, 0.2, 0.1])
    fwd = cocycle.ct_linear_transit(exm_continuous, 1.5, 0.0, x)
    back = cocycle.ct_linear_transit(exm_continuous, 0.0, 1.5, fwd)
    assert np.linalg.norm(back - x) < 1e-9


def test_batched_transits_match_single(exm_continuous):
    rng = np.random.default_rng(21)
    ts = rng.uniform(1.0, 4.0, size=8)
    ss = ts - rng.uniform(0.2, 2.0, size=8)
    xs = rng.uniform(-3, 3, size=(8, 5))
    lin = cocycle.ct_linear_transits(exm_continuous, ts, ss, xs, 1e-2)
    non = cocycle.ct_nonlinear_transits(exm_continuous, ts, ss, xs, 1e-2)
    for i in range(8):
        one = cocycle.ct_linear_transit(exm_continuous, ts[i], ss[i], xs[i], 1e-2)
        assert np.linalg.norm(lin[i] - one) < 1e-12
        one = cocycle.ct_nonlinear_transit(exm_continuous, ts[i], ss[i], xs[i], 1e-2)
        assert np.linalg.norm(non[i] - one) < 1e-12


def test_transfer_matrix_mode(exm_continuous):
    M = cocycle.ct_linear_transit(exm_continuous, 1.0, 0.0)
    assert M.shape == (5, 5)
    expect = np.diag(np.exp(np.array([-1.0, 0, 0, 0, 1.0])))
    assert np.allclose(M, expect, atol=1e-8)
