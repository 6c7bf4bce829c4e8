"""A-posteriori residual checks of the conjugacy identities.

Every identity is evaluated at sampled (time, state) pairs with the dynamics
side recomputed through cocycle primitives, never through the displacement
solver's internal recurrences, so each residual is an independent oracle.

Displacement legs run at half the requested tolerance; continuous
finite-difference legs at ``tol * step / 2`` since the difference quotient
divides leg errors by the step; transport legs at ``tol / (2 * amp)`` with
``amp`` the growth factor of the connecting transit.  Pass bounds absorb the
leg errors plus one Lipschitz amplification:

    conjugacy residuals:    3 * tol   (one pass through the step map)
    composition residuals:  5 * tol   (one displacement Lipschitz increment
                                       lambda/(1-lambda) on top)

with additional ``100 * step^2`` (central difference) respectively
``1000 * step^4`` (transit integration) terms in continuous time.  The
report footer restates the derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cocycle, conjugacy, conjugacy_ct
from .certificate import Certificate, _fmt, certify
from .conjugacy import _require_passed
from .errors import CenterNotTrivial
from .system import CENTER, SystemBundle

_QUASI_MULT = 3.0
_COMPOSE_MULT = 5.0
_FD_COEFF = 100.0       # covers |d^3/dt^3| of transported states, radius <= 30
_TRANSIT_COEFF = 1000.0  # covers fourth-order transit error over spans <= 2

_FOOTER = """\
# bound derivation: displacement legs run at tol/2 (finite-difference legs at
# tol*step/2, transport legs at tol/(2*amp) with amp the transit growth
# factor).  Conjugacy residuals combine two legs plus one pass through the
# step map, whose Lipschitz constant stays below 5 on certified bundles,
# giving 3*tol.  Composition residuals add a displacement Lipschitz increment
# of at most lambda/(1-lambda), giving 5*tol.  Continuous conjugacy carries
# an extra 100*step^2 central-difference term; continuous transport an extra
# 1000*step^4 integration term.
"""


# ---------------------------------------------------------------------------
# report types

@dataclass(frozen=True)
class SampleSpec:
    """Seeded sampling plan: states uniform in a ball, times in a range."""
    count: int
    seed: int
    radius: float
    t_lo: float
    t_hi: float


def make_sample_spec(bundle: SystemBundle, count=None, seed=None, radius=None,
                     t_lo=0.0, t_hi=None) -> SampleSpec:
    s = bundle.solver
    if t_hi is None:
        t_hi = 20.0 if bundle.is_discrete else 5.0
    return SampleSpec(
        count=int(s.samples if count is None else count),
        seed=int(s.seed if seed is None else seed),
        radius=float(s.ball_radius if radius is None else radius),
        t_lo=float(t_lo), t_hi=float(t_hi))


@dataclass(frozen=True)
class IdentityStat:
    identity: str
    count: int
    max_residual: float
    mean_residual: float
    bound: float
    passed: bool
    skipped: str | None = None


@dataclass(frozen=True)
class VerificationReport:
    kind: str
    name: str
    tol: float
    spec: SampleSpec
    stats: dict
    rows: list
    sup_h: float
    apriori: float
    passed: bool


# ---------------------------------------------------------------------------
# basics

def apriori_bound(cert: Certificate) -> float:
    """Fixed-point bound ``C_nu / (1 - lambda_total)`` on every displacement."""
    if cert.lambda_total >= 1.0:
        raise ValueError(
            f"no contraction: lambda_total = {cert.lambda_total} >= 1")
    return cert.c_nu / (1.0 - cert.lambda_total)


def _norms(M: np.ndarray) -> np.ndarray:
    return np.linalg.norm(M, axis=1)


def _ball(rng, count: int, dim: int, radius: float) -> np.ndarray:
    v = rng.normal(size=(count, dim))
    v /= np.maximum(_norms(v), 1e-300)[:, None]
    u = rng.uniform(0.0, 1.0, size=count) ** (1.0 / dim)
    return radius * u[:, None] * v


def center_forcing(bundle: SystemBundle, samples: int = 64) -> float:
    """Largest sampled center-scale forcing ``max ||P^c f(t, x)||``."""
    Pc = bundle.decomposition.class_projector(CENTER)
    if not Pc.any() or bundle.perturbation.is_zero:
        return 0.0
    s = bundle.solver
    rng = np.random.default_rng(s.seed + 1)
    xs = _ball(rng, samples, bundle.dim, s.ball_radius)
    if bundle.is_discrete:
        ts = rng.integers(0, s.horizon, size=samples).astype(float)
    else:
        ts = rng.uniform(0.0, s.t_max, size=samples)
    return float(_norms(bundle.perturbation.value(ts, xs) @ Pc.T).max())


def _require_trivial_center(bundle: SystemBundle) -> None:
    worst = center_forcing(bundle)
    if worst > bundle.solver.proj_eps:
        raise CenterNotTrivial(
            f"center scales carry forcing up to {worst:.3e}; the inverse-pair "
            f"and transport identities hold only without center forcing")


# ---------------------------------------------------------------------------
# discrete residual batches

def _quasi_discrete(bundle, cert, ns, xs, tol):
    leg = 0.5 * tol
    S = ns.size
    As = np.stack([bundle.linear.step(int(n)) for n in ns])
    Ax = np.einsum("sij,sj->si", As, xs)

    ev = conjugacy.eval_h_batch(bundle, cert, np.concatenate([ns, ns + 1]),
                                np.vstack([xs, Ax]), leg)
    vals = np.stack([r.value for r in ev])
    sup = float(_norms(vals).max())
    Hx, H1 = xs + vals[:S], Ax + vals[S:]
    FH = np.stack([cocycle.nonlinear_step(bundle, int(n), y)
                   for n, y in zip(ns, Hx)])
    tau = np.stack([conjugacy.deviation_tau(bundle, int(n), y)
                    for n, y in zip(ns, Hx)])
    r1 = _norms(H1 - FH - tau)

    Fx = np.stack([cocycle.nonlinear_step(bundle, int(n), x)
                   for n, x in zip(ns, xs)])
    evb = conjugacy.eval_hbar_batch(bundle, cert, np.concatenate([ns, ns + 1]),
                                    np.vstack([xs, Fx]), leg)
    vals = np.stack([r.value for r in evb])
    sup = max(sup, float(_norms(vals).max()))
    Hb, Hb1 = xs + vals[:S], Fx + vals[S:]
    taub = np.stack([conjugacy.deviation_tau_bar(bundle, int(n), x)
                     for n, x in zip(ns, xs)])
    r2 = _norms(Hb1 - np.einsum("sij,sj->si", As, Hb) - taub)
    return r1, r2, sup


def _inverse_discrete(bundle, cert, ns, xs, tol):
    leg = 0.5 * tol
    ev = conjugacy.eval_h_batch(bundle, cert, ns, xs, leg)
    Hx = xs + np.stack([r.value for r in ev])
    sup = float(max(np.linalg.norm(r.value) for r in ev))
    evb = conjugacy.eval_hbar_batch(bundle, cert, ns, Hx, leg)
    back = Hx + np.stack([r.value for r in evb])
    rA = _norms(back - xs)
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in evb)))

    evb = conjugacy.eval_hbar_batch(bundle, cert, ns, xs, leg)
    Hbx = xs + np.stack([r.value for r in evb])
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in evb)))
    ev = conjugacy.eval_h_batch(bundle, cert, ns, Hbx, leg)
    fwd = Hbx + np.stack([r.value for r in ev])
    rB = _norms(fwd - xs)
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in ev)))
    return rA, rB, sup


def _transport_discrete(bundle, cert, ns, ms, xs, tol):
    dmax = int(np.abs(ns - ms).max()) if ns.size else 1
    lip0 = float(bundle.perturbation.lipschitz_bound(0.0))
    grow = max(bundle.linear.norm_bound(), bundle.linear.inverse_norm_bound())
    leg = tol / (2.0 * (grow + lip0) ** dmax)
    S = ns.size

    Tnm = [cocycle.linear_transit(bundle, int(n), int(m)) for n, m in zip(ns, ms)]
    Tx = np.stack([T @ x for T, x in zip(Tnm, xs)])
    ev = conjugacy.eval_h_batch(bundle, cert, np.concatenate([ns, ms]),
                                np.vstack([Tx, xs]), leg)
    vals = np.stack([r.value for r in ev])
    sup = float(_norms(vals).max())
    Ht, Hm = Tx + vals[:S], xs + vals[S:]
    FHm = np.stack([cocycle.nonlinear_transit(bundle, int(n), int(m), y)
                    for n, m, y in zip(ns, ms, Hm)])
    rT = _norms(Ht - FHm)

    Fx = np.stack([cocycle.nonlinear_transit(bundle, int(n), int(m), x)
                   for n, m, x in zip(ns, ms, xs)])
    evb = conjugacy.eval_hbar_batch(bundle, cert, np.concatenate([ns, ms]),
                                    np.vstack([Fx, xs]), leg)
    vals = np.stack([r.value for r in evb])
    sup = max(sup, float(_norms(vals).max()))
    Hbt, Hbm = Fx + vals[:S], xs + vals[S:]
    THbm = np.stack([T @ y for T, y in zip(Tnm, Hbm)])
    rTd = _norms(Hbt - THbm)
    return rT, rTd, sup


# ---------------------------------------------------------------------------
# continuous residual batches

def _quasi_ct(bundle, cert, ts, xs, tol, step=None):
    h = bundle.solver.ode_step if step is None else float(step)
    leg = 0.5 * tol * min(h, 1.0)
    th = np.maximum(np.round(ts / h), 1.0) * h
    tm, tp = th - h, th + h
    S = th.size
    times = np.concatenate([tm, th, tp])
    A = bundle.linear.matrix
    Pc = bundle.decomposition.class_projector(CENTER)

    xm = cocycle.ct_linear_transits(bundle, tm, th, xs, h)
    xp = cocycle.ct_linear_transits(bundle, tp, th, xs, h)
    ev = conjugacy_ct.eval_h_ct_batch(bundle, cert, times,
                                      np.vstack([xm, xs, xp]), leg, h)
    vals = np.stack([r.value for r in ev])
    sup = float(_norms(vals).max())
    psim, psi0, psip = xm + vals[:S], xs + vals[S:2 * S], xp + vals[2 * S:]
    F0 = bundle.perturbation.value(th, psi0)
    field = psi0 @ A.T + F0 - F0 @ Pc.T
    r1 = _norms((psip - psim) / (2.0 * h) - field)

    ym = cocycle.ct_nonlinear_transits(bundle, tm, th, xs, h)
    yp = cocycle.ct_nonlinear_transits(bundle, tp, th, xs, h)
    evb = conjugacy_ct.eval_hbar_ct_batch(bundle, cert, times,
                                          np.vstack([ym, xs, yp]), leg, h)
    vals = np.stack([r.value for r in evb])
    sup = max(sup, float(_norms(vals).max()))
    phim, phi0, phip = ym + vals[:S], xs + vals[S:2 * S], yp + vals[2 * S:]
    forcing = bundle.perturbation.value(th, xs) @ Pc.T
    field = phi0 @ A.T + forcing
    r2 = _norms((phip - phim) / (2.0 * h) - field)
    return r1, r2, sup


def _inverse_ct(bundle, cert, ts, xs, tol, step=None):
    leg = 0.5 * tol
    ev = conjugacy_ct.eval_h_ct_batch(bundle, cert, ts, xs, leg, step)
    Hx = xs + np.stack([r.value for r in ev])
    sup = float(max(np.linalg.norm(r.value) for r in ev))
    evb = conjugacy_ct.eval_hbar_ct_batch(bundle, cert, ts, Hx, leg, step)
    back = Hx + np.stack([r.value for r in evb])
    rA = _norms(back - xs)
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in evb)))

    evb = conjugacy_ct.eval_hbar_ct_batch(bundle, cert, ts, xs, leg, step)
    Hbx = xs + np.stack([r.value for r in evb])
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in evb)))
    ev = conjugacy_ct.eval_h_ct_batch(bundle, cert, ts, Hbx, leg, step)
    fwd = Hbx + np.stack([r.value for r in ev])
    rB = _norms(fwd - xs)
    sup = max(sup, float(max(np.linalg.norm(r.value) for r in ev)))
    return rA, rB, sup


def transit_amplification(bundle: SystemBundle, span: float) -> float:
    """Growth factor ``exp(span * (||A|| + Lip f))`` of a connecting transit."""
    lip0 = float(bundle.perturbation.lipschitz_bound(0.0))
    return math.exp(abs(span) * (bundle.linear.norm_bound() + lip0))


def _transport_ct(bundle, cert, ts, ss, xs, tol, step=None):
    h = bundle.solver.ode_step if step is None else float(step)
    span = float(np.abs(ts - ss).max()) if ts.size else 1.0
    leg = tol / (2.0 * transit_amplification(bundle, span))
    S = ts.size
    times = np.concatenate([ts, ss])

    Tx = cocycle.ct_linear_transits(bundle, ts, ss, xs, h)
    ev = conjugacy_ct.eval_h_ct_batch(bundle, cert, times,
                                      np.vstack([Tx, xs]), leg, h)
    vals = np.stack([r.value for r in ev])
    sup = float(_norms(vals).max())
    Ht, Hs = Tx + vals[:S], xs + vals[S:]
    UHs = cocycle.ct_nonlinear_transits(bundle, ts, ss, Hs, h)
    rT = _norms(Ht - UHs)

    Ux = cocycle.ct_nonlinear_transits(bundle, ts, ss, xs, h)
    evb = conjugacy_ct.eval_hbar_ct_batch(bundle, cert, times,
                                          np.vstack([Ux, xs]), leg, h)
    vals = np.stack([r.value for r in evb])
    sup = max(sup, float(_norms(vals).max()))
    Hbt, Hbs = Ux + vals[:S], xs + vals[S:]
    THbs = cocycle.ct_linear_transits(bundle, ts, ss, Hbs, h)
    rTd = _norms(Hbt - THbs)
    return rT, rTd, sup


# ---------------------------------------------------------------------------
# public single-sample residuals

def residual_quasi_conjugacy(bundle: SystemBundle, cert: Certificate,
                             n_or_t, x, tol: float | None = None):
    """Defects ``(r1, r2)`` of the forward and backward conjugacy identities.

    Discrete: the one-step identities at time ``n``.  Continuous: central
    finite-difference defects of the transported solution property at the
    grid node nearest ``t`` (anchors below one step use the first interior
    node).
    """
    _require_passed(cert)
    tol = bundle.solver.tol if tol is None else float(tol)
    x = np.asarray(x, dtype=float).reshape(1, bundle.dim)
    if bundle.is_discrete:
        r1, r2, _ = _quasi_discrete(bundle, cert, np.array([int(n_or_t)]), x, tol)
    else:
        r1, r2, _ = _quasi_ct(bundle, cert, np.array([float(n_or_t)]), x, tol)
    return float(r1[0]), float(r2[0])


def residual_inverse_pair(bundle: SystemBundle, cert: Certificate,
                          n_or_t, x, tol: float | None = None):
    """Roundtrip defects ``(rA, rB)`` of the mutually inverse map pair."""
    _require_passed(cert)
    _require_trivial_center(bundle)
    tol = bundle.solver.tol if tol is None else float(tol)
    x = np.asarray(x, dtype=float).reshape(1, bundle.dim)
    if bundle.is_discrete:
        rA, rB, _ = _inverse_discrete(bundle, cert, np.array([int(n_or_t)]), x, tol)
    else:
        rA, rB, _ = _inverse_ct(bundle, cert, np.array([float(n_or_t)]), x, tol)
    return float(rA[0]), float(rB[0])


def residual_transport(bundle: SystemBundle, cert: Certificate,
                       n_or_t, source, x, tol: float | None = None,
                       step: float | None = None):
    """Defects of the two transport identities between times ``source`` and ``n_or_t``."""
    _require_passed(cert)
    _require_trivial_center(bundle)
    tol = bundle.solver.tol if tol is None else float(tol)
    x = np.asarray(x, dtype=float).reshape(1, bundle.dim)
    if bundle.is_discrete:
        rT, rTd, _ = _transport_discrete(
            bundle, cert, np.array([int(n_or_t)]), np.array([int(source)]), x, tol)
    else:
        rT, rTd, _ = _transport_ct(
            bundle, cert, np.array([float(n_or_t)]), np.array([float(source)]),
            x, tol, step)
    return float(rT[0]), float(rTd[0])


# ---------------------------------------------------------------------------
# full report

def _stat(rows, name, times, residuals, bound):
    res = np.asarray(residuals, dtype=float)
    for i, (t, r) in enumerate(zip(times, res)):
        rows.append((name, float(t), i, float(r)))
    mx = float(res.max()) if res.size else 0.0
    mean = float(res.mean()) if res.size else 0.0
    return IdentityStat(name, res.size, mx, mean, bound, mx <= bound)


def _skip(name, reason):
    return IdentityStat(name, 0, 0.0, 0.0, 0.0, True, skipped=reason)


def verification_report(bundle: SystemBundle, sample_spec: SampleSpec | None = None,
                        tol: float | None = None) -> VerificationReport:
    """Residuals of every identity over a seeded sample set, with verdicts."""
    spec = make_sample_spec(bundle) if sample_spec is None else sample_spec
    tol = bundle.solver.tol if tol is None else float(tol)
    cert = certify(bundle)
    _require_passed(cert)

    rng = np.random.default_rng(spec.seed)
    xs = _ball(rng, spec.count, bundle.dim, spec.radius)
    step = bundle.solver.ode_step
    if bundle.is_discrete:
        times = rng.integers(int(spec.t_lo), int(spec.t_hi) + 1,
                             size=spec.count).astype(float)
    else:
        # align on the step lattice: the displacement evaluator anchors at
        # grid nodes, and off-lattice queries would add an O(step) snap term
        # that masks the integration error the residuals are meant to expose
        times = rng.uniform(max(spec.t_lo, 2.0 * step), spec.t_hi, size=spec.count)
        times = np.maximum(np.round(times / step), 2.0) * step
    mags = rng.choice([1.0, 2.0], size=spec.count)
    signs = rng.choice([-1.0, 1.0], size=spec.count)
    partners = times - signs * mags
    flip = partners < 0.0
    partners[flip] = times[flip] + mags[flip]
    if not bundle.is_discrete:
        partners = np.round(partners / step) * step

    rows = []
    stats = {}
    if bundle.is_discrete:
        ns = times.astype(int)
        r1, r2, sup = _quasi_discrete(bundle, cert, ns, xs, tol)
        bound_q = _QUASI_MULT * tol
    else:
        r1, r2, sup = _quasi_ct(bundle, cert, times, xs, tol)
        bound_q = _QUASI_MULT * tol + _FD_COEFF * step ** 2
    stats["conjugacy-forward"] = _stat(rows, "conjugacy-forward", times, r1, bound_q)
    stats["conjugacy-backward"] = _stat(rows, "conjugacy-backward", times, r2, bound_q)

    worst_center = center_forcing(bundle)
    if worst_center <= bundle.solver.proj_eps:
        bound_c = _COMPOSE_MULT * tol
        if bundle.is_discrete:
            rA, rB, s2 = _inverse_discrete(bundle, cert, ns, xs, tol)
            rT, rTd, s3 = _transport_discrete(bundle, cert, ns,
                                              partners.astype(int), xs, tol)
            bound_t = bound_c
        else:
            rA, rB, s2 = _inverse_ct(bundle, cert, times, xs, tol)
            rT, rTd, s3 = _transport_ct(bundle, cert, times, partners, xs, tol)
            bound_t = bound_c + _TRANSIT_COEFF * step ** 4
        stats["inverse-pair"] = _stat(
            rows, "inverse-pair", np.concatenate([times, times]),
            np.concatenate([rA, rB]), bound_c)
        stats["transport"] = _stat(rows, "transport", times, rT, bound_t)
        stats["transport-dual"] = _stat(rows, "transport-dual", times, rTd, bound_t)
        sup = max(sup, s2, s3)
    else:
        reason = f"center forcing up to {worst_center:.3e}"
        stats["inverse-pair"] = _skip("inverse-pair", reason)
        stats["transport"] = _skip("transport", reason)
        stats["transport-dual"] = _skip("transport-dual", reason)

    B = apriori_bound(cert)
    stats["bound-margin"] = IdentityStat(
        "bound-margin", 1, sup, sup, B + tol, sup <= B + tol)
    rows.append(("bound-margin", 0.0, 0, sup))

    passed = all(s.passed for s in stats.values())
    return VerificationReport(
        kind=bundle.kind, name=bundle.name, tol=tol, spec=spec, stats=stats,
        rows=rows, sup_h=sup, apriori=B, passed=passed)


# ---------------------------------------------------------------------------
# report serialization

def verification_csv_rows(report: VerificationReport):
    rows = [["identity", "time", "sample_id", "residual"]]
    for name, t, i, r in report.rows:
        rows.append([name, _fmt(float(t)), str(i), _fmt(float(r))])
    return rows


def verification_summary(report: VerificationReport) -> str:
    """Key-value summary with the bound-derivation footer."""
    spec = report.spec
    lines = [
        f"verdict = {_fmt(report.passed)}",
        f"kind = {report.kind}",
        f"scenario = {report.name or '-'}",
        f"tolerance = {_fmt(report.tol)}",
        f"samples = {spec.count}",
        f"seed = {spec.seed}",
        f"radius = {_fmt(spec.radius)}",
        f"time_lo = {_fmt(spec.t_lo)}",
        f"time_hi = {_fmt(spec.t_hi)}",
        f"apriori_bound = {_fmt(report.apriori)}",
        f"sup_h = {_fmt(report.sup_h)}",
    ]
    for name in sorted(report.stats):
        s = report.stats[name]
        if s.skipped:
            lines.append(f"identity.{name}.verdict = skipped")
            lines.append(f"identity.{name}.reason = {s.skipped}")
            continue
        lines += [
            f"identity.{name}.count = {s.count}",
            f"identity.{name}.max = {_fmt(s.max_residual)}",
            f"identity.{name}.mean = {_fmt(s.mean_residual)}",
            f"identity.{name}.bound = {_fmt(s.bound)}",
            f"identity.{name}.verdict = {_fmt(s.passed)}",
        ]
    return "\n".join(lines) + "\n" + _FOOTER
