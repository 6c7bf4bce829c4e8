import math

import numpy as np
import pytest

from linconj import conjugacy_ct as cct
from linconj.certificate import certify
from linconj.errors import NoDecayDetected
from linconj.system import load_config_dict

H_EXACT = 0.3 * (1.0 - math.exp(-1.0))


@pytest.fixture(scope="module")
def scalar_ct():
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
    bundle = load_config_dict(cfg, name="scalar-ct")
    return bundle, certify(bundle)


def _expanding(rate, decay=None, lam=0.1, tail_eps=None):
    env = {"scale": 1, "lambda": lam,
           "nu": {"form": "constant", "value": 0.4},
           "mu": {"form": "constant", "value": 0.0}}
    if decay is not None:
        env["decay"] = decay
    solver = {"t-max": 10.0}
    if tail_eps is not None:
        solver["tail-eps"] = tail_eps
    cfg = {"system": {"kind": "continuous", "dimension": 1,
                      "linear": {"form": "constant-diagonal", "values": [rate]},
                      "perturbation": [{"component": 1, "family": "constant",
                                        "amplitude": 0.3}]},
           "decomposition": {"scales": [{"label": 1, "class": "unstable",
                                         "coordinates": [1]}]},
           "envelopes": [env],
           "solver": solver}
    return load_config_dict(cfg, name="expanding-ct")


def test_scalar_stable_integral_oracle(scalar_ct):
    # x' = -x + 0.3 gives h(t) = 0.3 (1 - e^{-t}), independent of the state
    bundle, cert = scalar_ct
    ev = cct.eval_h_ct(bundle, cert, 1.0, [5.0], tol=1e-10, step=0.005)
    assert abs(ev.value[0] - H_EXACT) <= 1e-11
    assert abs(ev.value[0] - H_EXACT) <= ev.error_estimate
    other = cct.eval_h_ct(bundle, cert, 1.0, [-2.0], tol=1e-10, step=0.005)
    assert other.value[0] == ev.value[0]


def test_scalar_backward_oracle_and_roundtrip(scalar_ct):
    bundle, cert = scalar_ct
    ev = cct.eval_hbar_ct(bundle, cert, 1.0, [5.0], tol=1e-10, step=0.002)
    assert abs(ev.value[0] + H_EXACT) <= 1e-11
    y = cct.apply_H_ct(bundle, cert, 1.0, [0.7], tol=1e-10, step=0.002)
    back = cct.apply_Hbar_ct(bundle, cert, 1.0, y, tol=1e-10, step=0.002)
    assert abs(back[0] - 0.7) <= 1e-10


def test_step_refinement_fourth_order(scalar_ct):
    bundle, cert = scalar_ct
    errs = []
    for h in (0.1, 0.05):
        ev = cct.eval_h_ct(bundle, cert, 1.0, [1.0], tol=1e-10, step=h)
        errs.append(abs(ev.value[0] - H_EXACT))
    assert errs[0] / errs[1] >= 8.0


def test_anchor_snap_reported(scalar_ct):
    bundle, cert = scalar_ct
    ev = cct.eval_h_ct(bundle, cert, 1.003, [0.0], tol=1e-8, step=0.01)
    assert ev.anchor == pytest.approx(1.0, abs=1e-12)
    assert ev.snap == pytest.approx(0.003, abs=1e-12)
    on_node = cct.eval_h_ct(bundle, cert, 1.0, [0.0], tol=1e-8, step=0.01)
    assert on_node.snap == 0.0


def test_zero_perturbation_displacements_vanish():
    cfg = {"system": {"kind": "continuous", "dimension": 1,
                      "linear": {"form": "constant-diagonal", "values": [-1.0]},
                      "perturbation": [{"component": 1, "family": "zero"}]},
           "decomposition": {"scales": [{"label": 1, "class": "stable",
                                         "coordinates": [1]}]},
           "envelopes": [{"scale": 1, "lambda": 0.005,
                          "nu": {"form": "constant", "value": 0.1},
                          "mu": {"form": "constant", "value": 0.0}}],
           "solver": {"t-max": 10.0}}
    bundle = load_config_dict(cfg, name="null-ct")
    cert = certify(bundle)
    ev = cct.eval_h_ct(bundle, cert, 2.0, [3.0], tol=1e-8)
    assert ev.value[0] == 0.0
    evb = cct.eval_hbar_ct(bundle, cert, 2.0, [3.0], tol=1e-8)
    assert evb.value[0] == 0.0


def test_expanding_window_declared_decay():
    bundle = _expanding(1.0, decay={"value": 1.0, "rate": 1.0})
    cert = certify(bundle)
    ev = cct.eval_h_ct(bundle, cert, 1.0, [0.0], tol=1e-6, step=0.01)
    # pure expanding scale with constant forcing: h(t) -> -0.3 as the
    # truncation horizon recedes, and the window stays short
    assert ev.window <= 20.0
    assert abs(ev.value[0] + 0.3 * (1.0 - math.exp(-(ev.t_hi - 1.0)))) <= 1e-9
    assert abs(ev.value[0] + 0.3) <= ev.error_estimate


def test_expanding_window_probed_decay_matches():
    bundle = _expanding(1.0)
    cert = certify(bundle)
    ev = cct.eval_h_ct(bundle, cert, 1.0, [0.0], tol=1e-6, step=0.01)
    assert ev.window <= 20.0
    assert abs(ev.value[0] + 0.3) <= 1e-6


def test_window_cap_raises_on_slow_declared_decay():
    # certifiable at a loose tail target, yet no admissible evaluation
    # window: the per-evaluation budget would need >50 time units
    bundle = _expanding(0.1, decay={"value": 1.0, "rate": 0.1},
                        lam=0.5, tail_eps=1e-6)
    cert = certify(bundle)
    assert cert.passed
    with pytest.raises(NoDecayDetected):
        cct.eval_h_ct(bundle, cert, 1.0, [0.0], tol=1e-8)


def test_error_budget_fields(exm_continuous, exm_continuous_cert):
    evs = cct.eval_h_ct_batch(exm_continuous, exm_continuous_cert,
                              [1.0, 3.0], [[0.5, -1.0, 2.0, 0.3, 0.1],
                                           [1.0, 0.2, -0.4, 0.8, -0.6]],
                              tol=1e-6)
    lam = exm_continuous_cert.lambda_total
    for ev in evs:
        parts = ev.picard_bound + ev.tail_bound + ev.quad_bound
        assert ev.error_estimate == pytest.approx(parts)
        assert ev.picard_bound >= 0.0 and ev.tail_bound >= 0.0
        assert ev.quad_bound > 0.0
        assert ev.error_estimate <= 1e-6
        assert ev.sweeps >= 1
        assert ev.t_hi >= ev.anchor + ev.window - 1e-9
        for r in ev.sweep_ratios:
            assert r <= lam + 0.02


def test_roundtrip_on_multiscale_system(exm_continuous, exm_continuous_cert):
    x = np.array([0.8, -0.5, 1.2, 0.4, -0.9])
    y = cct.apply_H_ct(exm_continuous, exm_continuous_cert, 2.0, x, tol=1e-6)
    back = cct.apply_Hbar_ct(exm_continuous, exm_continuous_cert, 2.0, y, tol=1e-6)
    assert np.linalg.norm(back - x) <= 1e-5


def test_deviation_vanishes_without_center(exm_continuous):
    dev = cct.deviation_ct(exm_continuous, 1.5, np.ones(5))
    assert dev.shape == (5,)
    assert np.all(dev == 0.0)


def test_rejects_discrete_bundles(exm_discrete, exm_discrete_cert):
    with pytest.raises(ValueError):
        cct.eval_h_ct(exm_discrete, exm_discrete_cert, 1.0, np.ones(5))
