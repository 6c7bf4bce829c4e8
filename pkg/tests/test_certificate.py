import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from linconj.certificate import (TailGate, certificate_csv_rows,
                                 certificate_report, certify,
                                 envelope_tail_continuous,
                                 envelope_tail_discrete, parse_report,
                                 stable_scale_sums)
from linconj.errors import NoDecayDetected
from linconj.system import Envelope, builtin_scenario, load_config_dict


# ---------------------------------------------------------------------------
# worked examples

def test_exm_discrete_sums(exm_discrete_cert):
    c = exm_discrete_cert
    assert c.passed and c.contraction_ok
    assert c.lambda_total == 0.8
    assert sorted(c.scales) == ["1", "2", "4", "5"]
    assert c.scale("1").s_nu == pytest.approx(2.0, abs=1e-9)
    assert c.scale("2").s_nu == pytest.approx(1.0, abs=1e-9)
    assert c.scale("4").s_nu == pytest.approx(1.0, abs=1e-9)
    assert c.scale("5").s_nu == pytest.approx(1.0, abs=1e-9)
    assert c.c_nu == pytest.approx(5.0, abs=1e-8)
    for k, want in (("1", 0.2), ("2", 0.2), ("4", 0.2), ("5", 0.1)):
        s = c.scale(k)
        assert s.s_mu == pytest.approx(want, abs=1e-9)
        assert s.s_mu <= s.lam + 1e-9
        assert s.stabilized
    assert c.failing_scales == ()


def test_exm_continuous_sums(exm_continuous_cert):
    c = exm_continuous_cert
    assert c.passed
    assert c.lambda_total == 0.8
    assert c.c_nu == pytest.approx(4.0, abs=1e-6)
    t_max = 50.0
    exact = 0.2 * (1.0 - math.exp(-t_max))
    assert abs(c.scale("1").s_mu - exact) <= 1e-6
    for k in c.scales:
        assert c.scale(k).s_mu <= 0.2 + 1e-9


def test_scalar_oracle_c_nu(scalar_oracle_cert):
    # sum_{l<=n} 2^{-(n-l)} * 0.3 -> 0.6 as n grows
    assert scalar_oracle_cert.c_nu == pytest.approx(0.6, abs=1e-9)
    assert scalar_oracle_cert.passed


def test_doubled_mu_failing_scales(exm_discrete):
    bad = exm_discrete.with_config(
        lambda cfg: [e["mu"].__setitem__("value", 2 * e["mu"]["value"])
                     for e in cfg["envelopes"]])
    c = certify(bad)
    assert not c.passed
    assert c.failing_scales == ("1", "2", "4")
    assert c.scale("5").verdict  # 2*0.1 = lambda_5 exactly, <= holds


def test_misclassified_unstable_raises(exm_discrete):
    def relabel(cfg):
        for s in cfg["decomposition"]["scales"]:
            if s["label"] == 3:
                s["class"] = "unstable"
        cfg["envelopes"].append({"scale": 3, "lambda": 0.1,
                                 "nu": {"form": "constant", "value": 1.0},
                                 "mu": {"form": "constant", "value": 0.1}})
    bad = exm_discrete.with_config(relabel)
    with pytest.raises(NoDecayDetected):
        certify(bad)


# ---------------------------------------------------------------------------
# independent oracles

def test_discrete_sums_against_naive_products(tmp_path):
    rng = np.random.default_rng(13)
    H = 48
    rows = []
    mats = []
    for j in range(H):
        A = np.array([[0.4 + 0.1 * math.sin(j), 0.05 * math.cos(3 * j)],
                      [0.0, 0.5 + 0.05 * math.cos(j)]])
        mats.append(A)
        rows.append(",".join(f"{float(v)!r}" for v in A.ravel()))
    (tmp_path / "steps.csv").write_text("\n".join(rows) + "\n")
    cfg = {"system": {"kind": "discrete", "dimension": 2,
                      "linear": {"form": "per-step-file", "path": "steps.csv"},
                      "perturbation": []},
           "decomposition": {"scales": [{"label": 1, "class": "stable",
                                         "coordinates": [1, 2]}]},
           "envelopes": [{"scale": 1, "lambda": 0.3,
                          "nu": {"form": "constant", "value": 1.0},
                          "mu": {"form": "constant", "value": 0.1}}],
           "solver": {"horizon": H}}
    b = load_config_dict(cfg, base_dir=str(tmp_path))
    rep = stable_scale_sums(b, "1")

    best = 0.0
    for n in range(1, H + 1):
        total = 0.0
        for l in range(1, n + 1):
            T = np.eye(2)
            for j in range(l, n):
                T = mats[j] @ T
            total += np.linalg.norm(T, 2)
        best = max(best, total)
    assert rep.s_nu == pytest.approx(best, rel=1e-12)
    assert rep.s_mu == pytest.approx(0.1 * best, rel=1e-12)


def test_dense_continuous_against_quadrature():
    # Jordan block: ||exp(tau A)||_2 = e^-tau * smax(tau) in closed form,
    # integrated to infinity by an independent quadrature
    cfg = {"system": {"kind": "continuous", "dimension": 2,
                      "linear": {"form": "constant-matrix",
                                 "values": [[-1.0, 1.0], [0.0, -1.0]]},
                      "perturbation": [{"component": 1, "family": "scaled_sine",
                                        "amplitude": 1.0, "lipschitz": 0.05,
                                        "source": 2}]},
           "decomposition": {"scales": [{"label": 1, "class": "stable",
                                         "coordinates": [1, 2]}]},
           "envelopes": [{"scale": 1, "lambda": 0.2,
                          "nu": {"form": "constant", "value": 1.0},
                          "mu": {"form": "constant", "value": 0.05}}],
           "solver": {"t-max": 40.0}}
    b = load_config_dict(cfg, name="jordan-block")
    c = certify(b)
    assert c.passed

    def smax(tau):
        return math.sqrt((2 + tau ** 2 + tau * math.sqrt(tau ** 2 + 4)) / 2)

    oracle, err = quad(lambda t: math.exp(-t) * smax(t), 0, np.inf)
    assert err < 1e-8
    assert abs(c.scale("1").s_nu - oracle) < 1e-9
    assert abs(c.scale("1").s_mu - 0.05 * oracle) < 1e-9


def test_dense_path_matches_diagonal(exm_continuous, exm_continuous_cert):
    dense = exm_continuous.with_config(
        lambda cfg: cfg["system"]["linear"].update(
            {"form": "constant-matrix",
             "values": np.diag([-1.0, 0, 0, 0, 1.0]).tolist()}))
    c = certify(dense)
    assert c.passed
    for k in exm_continuous_cert.scales:
        assert c.scale(k).s_nu == pytest.approx(
            exm_continuous_cert.scale(k).s_nu, abs=1e-8)
        assert c.scale(k).s_mu == pytest.approx(
            exm_continuous_cert.scale(k).s_mu, abs=1e-8)


def test_horizon_growth_is_stable(exm_discrete, exm_discrete_cert):
    c512 = certify(exm_discrete.with_solver(horizon=512))
    for k in c512.scales:
        assert c512.scale(k).s_nu == pytest.approx(
            exm_discrete_cert.scale(k).s_nu, abs=1e-9)


# ---------------------------------------------------------------------------
# tail machinery

def test_tail_gate_geometric():
    gate = TailGate(context="test")
    term = 1.0
    for _ in range(10):
        gate.feed(term)
        term *= 0.5
    tail = gate.tail()
    # last fed term 0.5^9, ratio 0.5: 2 * last * r / (1 - r) = 2 * last
    assert tail == pytest.approx(2.0 * 0.5 ** 9)
    # true remaining mass is last * r / (1 - r); safety factor 2 covers it
    assert tail >= 0.5 ** 9


def test_tail_gate_zeros():
    gate = TailGate()
    for _ in range(4):
        gate.feed(0.0)
    assert gate.tail() == 0.0


def test_tail_gate_no_decay():
    gate = TailGate(context="flat terms")
    with pytest.raises(NoDecayDetected):
        for _ in range(60):
            gate.feed(1.0)


def test_envelope_tail_discrete_matches_series():
    nu = Envelope("geometric", 1.5, 0.7)
    decay, n, L = (2.0, 0.6), 3, 5
    bound = envelope_tail_discrete(nu, decay, n, L)
    brute = sum(2.0 * 0.6 ** l * nu.at(n + l) for l in range(L + 1, 4000))
    assert bound == pytest.approx(brute, rel=1e-12)


def test_envelope_tail_continuous_matches_quadrature():
    nu = Envelope("exponential", 1.2, 0.3)
    decay, t, L = (1.5, 0.8), 2.0, 4.0
    bound = envelope_tail_continuous(nu, decay, t, L)
    brute, err = quad(lambda s: 1.5 * math.exp(-0.8 * (s - t)) * nu.at(s),
                      t + L, np.inf)
    assert err < 1e-8
    assert bound == pytest.approx(brute, rel=1e-8)


# ---------------------------------------------------------------------------
# report plumbing

def test_report_roundtrip(exm_discrete_cert):
    text = certificate_report(exm_discrete_cert)
    kv = parse_report(text)
    assert kv["verdict"] == "pass"
    assert kv["lambda_total"] == "0.80000000000000004"
    assert kv["scale.1.s_nu"] == "2"
    assert float(kv["c_nu"]) == pytest.approx(5.0, abs=1e-8)
    assert kv["audit.status"] == "sampled-consistent"


def test_certificate_csv(exm_discrete_cert):
    rows = certificate_csv_rows(exm_discrete_cert)
    assert rows[0] == ["scale", "class", "lambda", "s_nu", "s_mu", "tail_nu",
                       "tail_mu", "stabilized", "verdict"]
    assert len(rows) == 5
    by_scale = {r[0]: r for r in rows[1:]}
    assert by_scale["5"][1] == "unstable"
    assert float(by_scale["1"][3]) == pytest.approx(2.0, abs=1e-9)


def test_certify_runtime(exm_discrete):
    t0 = time.time()
    certify(builtin_scenario("exm-discrete"))
    assert time.time() - t0 < 5.0
