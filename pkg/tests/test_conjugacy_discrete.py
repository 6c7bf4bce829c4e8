import math

import numpy as np
import pytest

from linconj import conjugacy
from linconj.certificate import certify
from linconj.cocycle import linear_orbit, linear_transit
from linconj.errors import CertificateNotPassed
from linconj.system import CENTER, STABLE, UNSTABLE, load_config_dict


def test_scalar_oracle_values(scalar_oracle, scalar_oracle_cert):
    # sum_{l<=3} 2^{-(3-l)} * 0.3 = 0.3 * (1 + 1/2 + 1/4 + 1/8) = 0.525
    r = conjugacy.eval_h(scalar_oracle, scalar_oracle_cert, 3, [1.0])
    assert abs(r.value[0] - 0.525) <= 1e-12
    rb = conjugacy.eval_hbar(scalar_oracle, scalar_oracle_cert, 3, [1.0])
    assert abs(rb.value[0] + 0.525) <= 1e-12


def test_scalar_oracle_inverse_composition(scalar_oracle, scalar_oracle_cert):
    y = conjugacy.apply_H(scalar_oracle, scalar_oracle_cert, 3, [1.0])
    back = conjugacy.apply_Hbar(scalar_oracle, scalar_oracle_cert, 3, y)
    assert abs(back[0] - 1.0) <= 1e-12
    z = conjugacy.apply_Hbar(scalar_oracle, scalar_oracle_cert, 3, [1.0])
    fwd = conjugacy.apply_H(scalar_oracle, scalar_oracle_cert, 3, z)
    assert abs(fwd[0] - 1.0) <= 1e-12


def test_picard_iteration_count_oracle():
    assert conjugacy.picard_iteration_count(0.8, 4.0, 1e-6) == 76


def test_picard_iteration_count_minimality():
    rng = np.random.default_rng(2)
    for _ in range(50):
        lam = float(rng.uniform(0.05, 0.95))
        c = float(rng.uniform(0.1, 20.0))
        tol = float(10.0 ** rng.uniform(-10, -2))
        m = conjugacy.picard_iteration_count(lam, c, tol)
        assert lam ** m * c / (1 - lam) <= tol
        if m > 0:
            assert lam ** (m - 1) * c / (1 - lam) > tol


def test_displacement_annihilates_center(exm_discrete, exm_discrete_cert):
    Pc = exm_discrete.decomposition.class_projector(CENTER)
    rng = np.random.default_rng(4)
    ns = rng.integers(0, 15, size=10)
    xs = rng.uniform(-8, 8, size=(10, 5))
    for ev in conjugacy.eval_h_batch(exm_discrete, exm_discrete_cert, ns, xs):
        assert np.linalg.norm(Pc @ ev.value) <= 1e-14


def test_error_estimate_and_ratios(exm_discrete, exm_discrete_cert):
    rng = np.random.default_rng(6)
    ns = rng.integers(0, 20, size=20)
    xs = rng.uniform(-10, 10, size=(20, 5))
    evs = conjugacy.eval_h_batch(exm_discrete, exm_discrete_cert, ns, xs, 1e-6)
    lam = exm_discrete_cert.lambda_total
    for ev in evs:
        assert ev.error_estimate <= 1e-6
        for r in ev.sweep_ratios:
            assert r <= lam + 0.02


def test_batch_matches_single(exm_discrete, exm_discrete_cert):
    xs = np.array([[1.0, 2.0, -1.0, 0.5, 0.25],
                   [-3.0, 0.1, 4.0, -2.0, 1.0]])
    ns = np.array([2, 7])
    batch = conjugacy.eval_h_batch(exm_discrete, exm_discrete_cert, ns, xs)
    for i, n in enumerate(ns):
        one = conjugacy.eval_h(exm_discrete, exm_discrete_cert, int(n), xs[i])
        assert np.allclose(batch[i].value, one.value, atol=1e-13)


def test_deviation_is_center_projected_forcing(exm_discrete):
    x = np.array([0.5, 1.0, -2.0, 0.7, 0.1])
    Pc = exm_discrete.decomposition.class_projector(CENTER)
    f = exm_discrete.perturbation.value(3.0, x)
    assert np.allclose(conjugacy.deviation_tau(exm_discrete, 3, x), -(Pc @ f))
    assert np.allclose(conjugacy.deviation_tau_bar(exm_discrete, 3, x), Pc @ f)


def test_identity_null_displacements_vanish(identity_null, identity_null_cert):
    ev = conjugacy.eval_h(identity_null, identity_null_cert, 5, [1.0])
    assert ev.value[0] == 0.0
    evb = conjugacy.eval_hbar(identity_null, identity_null_cert, 5, [1.0])
    assert evb.value[0] == 0.0


def test_requires_passed_certificate(exm_discrete):
    bad = exm_discrete.with_config(
        lambda cfg: [e["mu"].__setitem__("value", 2 * e["mu"]["value"])
                     for e in cfg["envelopes"]])
    cert = certify(bad)
    with pytest.raises(CertificateNotPassed):
        conjugacy.eval_h(bad, cert, 3, np.ones(5))


def test_apriori_bound_is_tight_on_scalar(scalar_oracle, scalar_oracle_cert):
    bound = scalar_oracle_cert.c_nu / (1.0 - scalar_oracle_cert.lambda_total)
    ev = conjugacy.eval_h(scalar_oracle, scalar_oracle_cert, 30, [0.0])
    sup = abs(ev.value[0])
    assert sup <= bound + 1e-6
    assert (bound - sup) / bound <= 0.01


# ---------------------------------------------------------------------------
# independent double-sum oracle

def _coupled_system(tmp_path):
    # diagonal per-step rates keep the two-sided sums convergent; the
    # coupling lives in the perturbation sources, so the fixed point is
    # genuinely vector-valued and the iteration does not truncate early
    H = 96
    mats = []
    rows = []
    for j in range(H):
        A = np.diag([0.45 + 0.05 * math.sin(j), 2.0 + 0.1 * math.cos(j)])
        mats.append(A)
        rows.append(",".join(f"{float(v)!r}" for v in A.ravel()))
    (tmp_path / "steps.csv").write_text("\n".join(rows) + "\n")
    cfg = {"system": {"kind": "discrete", "dimension": 2,
                      "linear": {"form": "per-step-file", "path": "steps.csv"},
                      "perturbation": [
                          {"component": 1, "family": "scaled_tanh",
                           "amplitude": 0.5, "lipschitz": 0.05, "source": 2},
                          {"component": 2, "family": "scaled_sine",
                           "amplitude": 0.5, "lipschitz": 0.05, "source": 1}]},
           "decomposition": {"scales": [
               {"label": 1, "class": "stable", "coordinates": [1]},
               {"label": 2, "class": "unstable", "coordinates": [2]}]},
           "envelopes": [
               {"scale": 1, "lambda": 0.3,
                "nu": {"form": "constant", "value": 1.0},
                "mu": {"form": "constant", "value": 0.06}},
               {"scale": 2, "lambda": 0.3,
                "nu": {"form": "constant", "value": 1.0},
                "mu": {"form": "constant", "value": 0.06}}],
           "solver": {"horizon": H}}
    return load_config_dict(cfg, base_dir=str(tmp_path)), mats


def test_displacement_against_naive_double_sum(tmp_path):
    bundle, mats = _coupled_system(tmp_path)
    cert = certify(bundle)
    assert cert.passed

    n, x = 6, np.array([1.5, -0.8])
    N = 80
    Ps = bundle.decomposition.class_projector(STABLE)
    Pu = bundle.decomposition.class_projector(UNSTABLE)
    f = bundle.perturbation.value

    # forward transit matrices A(j, l), j >= l, by explicit products
    def transit(j, l):
        T = np.eye(2)
        for i in range(l, j):
            T = mats[i] @ T
        return T

    # backward products must compose in the opposite order
    def transit_back(j, l):
        T = np.eye(2)
        for i in range(l - 1, j - 1, -1):
            T = T @ np.linalg.inv(mats[i])
        return T

    xi = linear_orbit(bundle, n, x, 0, N)
    h = np.zeros((N + 1, 2))
    for _ in range(200):
        w = xi + h
        nxt = np.zeros_like(h)
        for j in range(N + 1):
            acc = np.zeros(2)
            for l in range(j):
                acc += transit(j, l + 1) @ (Ps @ f(float(l), w[l]))
            for l in range(j, N):
                acc -= transit_back(j, l + 1) @ (Pu @ f(float(l), w[l]))
            nxt[j] = acc
        if np.abs(nxt - h).max() < 1e-14:
            h = nxt
            break
        h = nxt

    ev = conjugacy.eval_h(bundle, cert, n, x, tol=1e-12)
    assert np.linalg.norm(ev.value - h[n]) <= 1e-10


def test_transit_consistency_of_displacements(tmp_path):
    # H_n(A(n,m) x) = F(n,m) H_m(x) on a certified coupled system
    bundle, _ = _coupled_system(tmp_path)
    cert = certify(bundle)
    from linconj.cocycle import nonlinear_transit
    x = np.array([0.7, 0.4])
    m, n = 3, 9
    Hm = conjugacy.apply_H(bundle, cert, m, x, tol=1e-10)
    lhs = conjugacy.apply_H(bundle, cert, n,
                            linear_transit(bundle, n, m) @ x, tol=1e-10)
    rhs = nonlinear_transit(bundle, n, m, Hm)
    assert np.linalg.norm(lhs - rhs) <= 1e-8
