"""Discrete-time conjugacy displacements.

The displacement ``h_n(x)`` of the map taking linear to perturbed dynamics
solves a fixed-point equation whose orbit restriction closes over a window
``[0, N]``: with ``o_j`` the linear orbit through ``(n, x)`` and
``xi = o + h``,

    u_0 = 0,    u_{j+1} = A_j u_j + P^s f_j(xi_j),
    v_N = 0,    v_j     = A_j^{-1} (P^u f_j(xi_j) + v_{j+1}),
    h  = u - v,

swept until the a-posteriori contraction bound meets the error budget.  The
companion displacement ``hbar_n(x)`` needs no iteration: the same two
recurrences are driven by ``f`` along the nonlinear orbit through ``(n, x)``
and combine as ``hbar = v - u``.

Cutting the expanding-side recursion at ``N`` drops a tail that is bounded
per scale (declared transfer envelope when present, ratio-gated
extrapolation otherwise).  Each evaluation budgets half the requested
tolerance for the iteration and half for the truncation, the latter
tightened by ``1 - lambda_total`` because truncation error feeds back
through the sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certificate import Certificate, TailGate, envelope_tail_discrete
from .cocycle import default_inverse_tol, linear_orbit, nonlinear_inverse_step, nonlinear_step
from .errors import CertificateNotPassed, NoDecayDetected
from .system import CENTER, DISCRETE, STABLE, UNSTABLE, SystemBundle

_WINDOW_BUCKET = 32
_WINDOW_CAP = 4096


def picard_iteration_count(lam: float, c_nu: float, tol: float) -> int:
    """Smallest sweep count with a-priori error ``lam**m * c_nu / (1-lam) <= tol``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"contraction factor must lie in [0, 1), got {lam}")
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    base = c_nu / (1.0 - lam)
    if base <= tol:
        return 0
    if lam == 0.0:
        return 1
    return max(int(math.ceil(math.log(tol / base) / math.log(lam))), 1)


@dataclass(frozen=True)
class DisplacementResult:
    """One displacement evaluation with its accounted error budget."""
    anchor: int
    value: np.ndarray
    error_estimate: float
    window: tuple
    sweeps: int
    sweep_ratios: tuple
    picard_bound: float
    tail_bound: float
    orbit_defect: float = 0.0


def _require_passed(cert: Certificate) -> None:
    if not cert.passed:
        failing = ", ".join(cert.failing_scales) if cert.failing_scales else "none"
        raise CertificateNotPassed(
            f"certificate verdict is fail (failing scales: {failing}; "
            f"contraction {'ok' if cert.contraction_ok else 'violated'}; "
            f"audit {cert.audit.status})")


def _require_discrete(bundle: SystemBundle) -> None:
    if bundle.kind != DISCRETE:
        raise ValueError(f"expected a discrete-time system, got kind {bundle.kind!r}")


# ---------------------------------------------------------------------------
# window planning

def _scale_window(bundle: SystemBundle, label: str, n_hi: int, budget: float):
    """Offset count past the anchor for one expanding scale, with its tail bound."""
    env = bundle.envelope(label)
    if env.decay is not None:
        # nu forms are nonincreasing in time, so anchor 0 dominates
        t = envelope_tail_discrete(env.nu, env.decay, 0, 0)
        if math.isfinite(t):
            L = 0
            while t > budget:
                L += 1
                if L > _WINDOW_CAP:
                    raise NoDecayDetected(
                        f"scale {label}: declared envelope needs over "
                        f"{_WINDOW_CAP} offsets to meet the tail budget")
                t = envelope_tail_discrete(env.nu, env.decay, 0, L)
            return L, t
    deco = bundle.decomposition
    mask, P = deco.mask(label), deco.projector(label)
    d = bundle.dim
    ns = np.arange(n_hi + 1)
    Q = np.broadcast_to(np.eye(d), (n_hi + 1, d, d)).copy()
    gate = TailGate(context=f"scale {label} window")
    o = 0
    while True:
        o += 1
        if o > _WINDOW_CAP:
            raise NoDecayDetected(
                f"scale {label}: no usable decay within {_WINDOW_CAP} offsets")
        Q = Q @ np.linalg.inv(bundle.linear.steps(o - 1, n_hi + o))
        sub = Q[:, :, mask] if mask is not None else Q @ P
        terms = np.linalg.svd(sub, compute_uv=False)[:, 0]
        gate.feed(float(np.max(terms * env.nu.at(ns + o))))
        t = gate.tail()
        if t is not None and t <= budget:
            return o, t


def _plan_window(bundle: SystemBundle, n_hi: int, budget: float):
    """Common window extension for all expanding scales, anchors up to ``n_hi``.

    Returns ``(L, tail)`` where ``tail`` bounds the total dropped mass for any
    anchor ``<= n_hi`` once the window ends at ``anchor_max + L``.
    """
    labels = [s.label for s in bundle.decomposition.scales if s.klass == UNSTABLE]
    if not labels:
        return 0, 0.0
    bucket = ((max(n_hi, 1) + _WINDOW_BUCKET - 1) // _WINDOW_BUCKET) * _WINDOW_BUCKET
    key = ("dwindow", bucket, f"{budget:.6e}")
    hit = bundle._caches.get(key)
    if hit is None:
        per = budget / len(labels)
        L = 0
        total = 0.0
        for label in labels:
            Lk, tk = _scale_window(bundle, label, bucket, per)
            L = max(L, Lk)
            total += tk
        hit = (L, total)
        bundle._caches[key] = hit
    return hit


# ---------------------------------------------------------------------------
# sweep machinery

def _eval_f_grid(bundle: SystemBundle, times: np.ndarray, states: np.ndarray) -> np.ndarray:
    S, N, d = states.shape
    if N == 0 or bundle.perturbation.is_zero:
        return np.zeros_like(states)
    flat = states.reshape(S * N, d)
    return bundle.perturbation.value(np.tile(times, S), flat).reshape(S, N, d)


def _two_sided_sums(steps, invs, gs, gu) -> np.ndarray:
    """``u - v`` for the contracting-forward / expanding-backward recurrences."""
    S, N, d = gs.shape
    out = np.empty((S, N + 1, d))
    u = np.zeros((S, d))
    out[:, 0] = 0.0
    for j in range(N):
        u = u @ steps[j].T + gs[:, j]
        out[:, j + 1] = u
    v = np.zeros((S, d))
    for j in range(N - 1, -1, -1):
        v = (gu[:, j] + v) @ invs[j].T
        out[:, j] -= v
    return out


def eval_h_batch(bundle: SystemBundle, cert: Certificate, anchors, points,
                 tol: float | None = None):
    """Displacements of the linear-to-perturbed map at several ``(n, x)``."""
    _require_discrete(bundle)
    _require_passed(cert)
    tol = bundle.solver.tol if tol is None else float(tol)
    anchors = np.asarray(anchors, dtype=int)
    if anchors.size and int(anchors.min()) < 0:
        raise ValueError("anchors must be non-negative")
    xs = np.asarray(points, dtype=float).reshape(anchors.size, bundle.dim)
    lam, c_nu = cert.lambda_total, cert.c_nu

    n_hi = int(anchors.max()) if anchors.size else 0
    L, tail_raw = _plan_window(bundle, n_hi, 0.5 * tol * (1.0 - lam))
    tail_bound = tail_raw / (1.0 - lam)
    N = n_hi + L

    orbits = np.stack([linear_orbit(bundle, int(n), x, 0, N)
                       for n, x in zip(anchors, xs)])
    steps = bundle.linear.steps(0, N)
    invs = np.linalg.inv(steps) if N else steps
    Ps = bundle.decomposition.class_projector(STABLE)
    Pu = bundle.decomposition.class_projector(UNSTABLE)
    times = np.arange(N, dtype=float)

    m_cap = picard_iteration_count(lam, c_nu, 0.5 * tol)
    target = math.inf if lam == 0.0 else 0.5 * tol * (1.0 - lam) / lam
    h = np.zeros_like(orbits)
    delta = math.inf
    step_delta = np.zeros(anchors.size)
    ratios = []
    sweeps = 0
    while sweeps < m_cap:
        F = _eval_f_grid(bundle, times, orbits[:, :-1] + h[:, :-1])
        hn = _two_sided_sums(steps, invs, F @ Ps.T, F @ Pu.T)
        step_delta = np.linalg.norm(hn - h, axis=2).max(axis=1)
        new_delta = float(step_delta.max()) if step_delta.size else 0.0
        if math.isfinite(delta) and delta > 0.0:
            ratios.append(new_delta / delta)
        delta = new_delta
        h = hn
        sweeps += 1
        if delta <= target or delta == 0.0:
            break

    apriori = lam ** sweeps * c_nu / (1.0 - lam)
    results = []
    for i, n in enumerate(anchors):
        if sweeps:
            picard = min(apriori, lam / (1.0 - lam) * float(step_delta[i]))
        else:
            picard = apriori
        results.append(DisplacementResult(
            anchor=int(n), value=h[i, int(n)].copy(),
            error_estimate=picard + tail_bound, window=(0, N), sweeps=sweeps,
            sweep_ratios=tuple(ratios), picard_bound=picard,
            tail_bound=tail_bound))
    return results


def eval_h(bundle: SystemBundle, cert: Certificate, n: int, x,
           tol: float | None = None) -> DisplacementResult:
    return eval_h_batch(bundle, cert, [n], [x], tol)[0]


def eval_hbar_batch(bundle: SystemBundle, cert: Certificate, anchors, points,
                    tol: float | None = None):
    """Displacements of the perturbed-to-linear map at several ``(n, x)``.

    Single pass: the integrand rides the perturbed orbit through each
    ``(n, x)``, so only orbit construction (with polished inverse steps on
    the backward side) and one pair of recurrences is needed.
    """
    _require_discrete(bundle)
    _require_passed(cert)
    tol = bundle.solver.tol if tol is None else float(tol)
    anchors = np.asarray(anchors, dtype=int)
    if anchors.size and int(anchors.min()) < 0:
        raise ValueError("anchors must be non-negative")
    xs = np.asarray(points, dtype=float).reshape(anchors.size, bundle.dim)
    lam = cert.lambda_total

    n_hi = int(anchors.max()) if anchors.size else 0
    L, tail_raw = _plan_window(bundle, n_hi, 0.5 * tol * (1.0 - lam))
    N = n_hi + L
    tol_inv = default_inverse_tol(tol)

    steps = bundle.linear.steps(0, N)
    invs = np.linalg.inv(steps) if N else steps
    Ps = bundle.decomposition.class_projector(STABLE)
    Pu = bundle.decomposition.class_projector(UNSTABLE)
    times = np.arange(N, dtype=float)

    # A backward orbit with inverse-step residuals r_j is the exact orbit of
    # the shifted perturbation f_j - r_j, so the anchor value is off by the
    # stable-transit-weighted residual sum, amplified once by the fixed-point
    # Lipschitz factor 1/(1-lambda).  Transit weights cancel the backward
    # state growth, keeping the estimate finite over long windows.
    orbits = np.empty((anchors.size, N + 1, bundle.dim))
    defects = np.zeros(anchors.size)
    for i, (n, x) in enumerate(zip(anchors, xs)):
        n = int(n)
        z = orbits[i]
        z[n] = x
        for j in range(n, N):
            z[j + 1] = nonlinear_step(bundle, j, z[j])
        defect = 0.0
        M = np.eye(bundle.dim)
        for j in range(n - 1, -1, -1):
            z[j], res = nonlinear_inverse_step(bundle, j, z[j + 1], tol_inv=tol_inv)
            defect += float(np.linalg.norm(M @ Ps, 2)) * res
            M = M @ steps[j]
        defects[i] = defect / (1.0 - lam)

    F = _eval_f_grid(bundle, times, orbits[:, :-1])
    hbar = -_two_sided_sums(steps, invs, F @ Ps.T, F @ Pu.T)
    results = []
    for i, n in enumerate(anchors):
        results.append(DisplacementResult(
            anchor=int(n), value=hbar[i, int(n)].copy(),
            error_estimate=tail_raw + float(defects[i]),
            window=(0, N), sweeps=1, sweep_ratios=(),
            picard_bound=0.0, tail_bound=tail_raw,
            orbit_defect=float(defects[i])))
    return results


def eval_hbar(bundle: SystemBundle, cert: Certificate, n: int, x,
              tol: float | None = None) -> DisplacementResult:
    return eval_hbar_batch(bundle, cert, [n], [x], tol)[0]


# ---------------------------------------------------------------------------
# full maps and deviations

def apply_H(bundle: SystemBundle, cert: Certificate, n: int, x,
            tol: float | None = None) -> np.ndarray:
    """Image of ``x`` under the map conjugating linear to perturbed dynamics."""
    return np.asarray(x, dtype=float) + eval_h(bundle, cert, n, x, tol).value


def apply_Hbar(bundle: SystemBundle, cert: Certificate, n: int, x,
               tol: float | None = None) -> np.ndarray:
    """Image of ``x`` under the map conjugating perturbed to linear dynamics."""
    return np.asarray(x, dtype=float) + eval_hbar(bundle, cert, n, x, tol).value


def deviation_tau(bundle: SystemBundle, n: int, x) -> np.ndarray:
    """Uncontrolled-direction deviation ``-P^c f_n(x)`` entering the forward identity."""
    Pc = bundle.decomposition.class_projector(CENTER)
    fx = bundle.perturbation.value(float(n), np.asarray(x, dtype=float))
    return -(Pc @ fx)


def deviation_tau_bar(bundle: SystemBundle, n: int, x) -> np.ndarray:
    """Deviation ``+P^c f_n(x)`` entering the backward identity."""
    return -deviation_tau(bundle, n, x)
