"""Cocycle engine: linear/nonlinear transits in discrete and continuous time.

Discrete transits compose step matrices sequentially (newest factor on the
left); backward transits compose inverses.  Nonlinear backward steps solve
``A_n x + f_n(x) = y`` with a damped fixed-point iteration seeded at
``A_n^{-1} y``, falling back to a Newton iteration with finite-difference
Jacobians when the fixed point does not contract.  Whatever path is taken, the
returned point satisfies the residual contract ``||F_n(x) - y|| <= tol_inv``.

Continuous transits integrate the coefficient ODE with classical fixed-step
RK4; the step never exceeds the requested one and divides the interval
exactly, so transits are deterministic for a given step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonContractiveInverse
from .system import SystemBundle


def default_inverse_tol(tol: float) -> float:
    """Residual target for one backward nonlinear step."""
    return min(1e-12, tol / 10.0)


# ---------------------------------------------------------------------------
# discrete linear cocycle

def linear_transit(bundle: SystemBundle, m: int, n: int) -> np.ndarray:
    """Transfer matrix of the linear system from step ``n`` to step ``m``.

    Identity for ``m == n``; product ``A_{m-1} ... A_n`` for ``m > n``;
    product of step inverses for ``m < n``.
    """
    d = bundle.dim
    if m == n:
        return np.eye(d)
    if m > n:
        steps = bundle.linear.steps(n, m)
        out = np.eye(d)
        for j in range(steps.shape[0]):
            out = steps[j] @ out
        return out
    inv = bundle.linear.inverses(m, n)
    out = np.eye(d)
    for j in range(inv.shape[0]):
        out = inv[j] @ out
    return out


def linear_orbit(bundle: SystemBundle, n: int, x, lo: int, hi: int) -> np.ndarray:
    """States ``A(j, n) x`` for ``j = lo..hi`` as an ``(hi-lo+1, d)`` array."""
    x = np.asarray(x, dtype=float)
    if not lo <= n <= hi:
        raise ValueError(f"anchor {n} outside window [{lo}, {hi}]")
    out = np.empty((hi - lo + 1, bundle.dim))
    out[n - lo] = x
    if hi > n:
        steps = bundle.linear.steps(n, hi)
        for j in range(n, hi):
            out[j - lo + 1] = steps[j - n] @ out[j - lo]
    if n > lo:
        inv = bundle.linear.inverses(lo, n)
        for j in range(n, lo, -1):
            out[j - lo - 1] = inv[j - 1 - lo] @ out[j - lo]
    return out


# ---------------------------------------------------------------------------
# discrete nonlinear maps

def nonlinear_step(bundle: SystemBundle, n: int, x) -> np.ndarray:
    """One application of the perturbed map ``F_n = A_n + f_n``."""
    x = np.asarray(x, dtype=float)
    return bundle.linear.step(n) @ x + bundle.perturbation.value(float(n), x)


def nonlinear_inverse_step(bundle: SystemBundle, n: int, y, tol_inv: float = 1e-12,
                           max_iter: int = 100):
    """Solve ``F_n(x) = y``; returns ``(x, residual)``.

    Runs the fixed-point iteration ``x <- A_n^{-1}(y - f_n(x))`` and, if it
    expands, a Newton iteration on ``F_n(x) - y`` with a finite-difference
    Jacobian.  Raises :class:`NonContractiveInverse` when neither reaches the
    residual target within ``max_iter`` iterations.  The target scales with
    ``max(1, ||y||)``: backward orbits grow along formerly stable directions
    and an absolute target below the floating-point floor of the state
    magnitude would be unreachable.
    """
    y = np.asarray(y, dtype=float)
    tol_inv = tol_inv * max(1.0, float(np.linalg.norm(y)))
    A = bundle.linear.step(n)
    Ainv = np.linalg.inv(A)
    f = bundle.perturbation.value
    t = float(n)

    def residual(x):
        return A @ x + f(t, x) - y

    x = Ainv @ y
    if bundle.perturbation.is_zero:
        return x, float(np.linalg.norm(residual(x)))

    best_x, best_r = x, float(np.linalg.norm(residual(x)))
    prev = best_r
    for _ in range(max_iter):
        if best_r <= tol_inv:
            # cheap extra polish while progress is at least twofold
            x_try = Ainv @ (y - f(t, best_x))
            r_try = float(np.linalg.norm(residual(x_try)))
            if r_try < best_r / 2:
                best_x, best_r = x_try, r_try
                continue
            return best_x, best_r
        x = Ainv @ (y - f(t, x))
        r = float(np.linalg.norm(residual(x)))
        if r < best_r:
            best_x, best_r = x, r
        if r > prev and r > tol_inv:
            break
        prev = r
    if best_r <= tol_inv:
        return best_x, best_r

    # Newton fallback with forward-difference Jacobian
    x = best_x
    d = bundle.dim
    for _ in range(max_iter):
        rvec = residual(x)
        r = float(np.linalg.norm(rvec))
        if r < best_r:
            best_x, best_r = x, r
        if best_r <= tol_inv:
            return best_x, best_r
        h = 1e-7 * max(1.0, float(np.linalg.norm(x)))
        X = x[None, :] + h * np.eye(d)
        J = A + (f(t, X) - f(t, x)[None, :]).T / h
        try:
            dx = np.linalg.solve(J, rvec)
        except np.linalg.LinAlgError as exc:
            raise NonContractiveInverse(
                f"singular Jacobian while inverting step {n}") from exc
        x = x - dx
    raise NonContractiveInverse(
        f"backward step {n} did not reach residual {tol_inv:.1e} "
        f"(best {best_r:.3e} after {max_iter} iterations)")


def nonlinear_transit(bundle: SystemBundle, m: int, n: int, x,
                      tol_inv: float = 1e-12) -> np.ndarray:
    """Perturbed transit from step ``n`` to step ``m``.

    Forward transits compose ``F_j``; backward transits are defined as exact
    inverses of the forward composition and are computed by chained backward
    steps, each meeting the residual contract.
    """
    x = np.asarray(x, dtype=float)
    if m == n:
        return x.copy()
    if m > n:
        for j in range(n, m):
            x = nonlinear_step(bundle, j, x)
        return x
    for j in range(n - 1, m - 1, -1):
        x, _ = nonlinear_inverse_step(bundle, j, x, tol_inv)
    return x


@dataclass(frozen=True)
class OrbitTable:
    """Window of linear (and optionally nonlinear) orbit states.

    ``times[i]`` is the step of row ``i``; ``linear[i]`` is ``A(times[i], n) x``
    for the anchor ``(n, x)``, and ``nonlinear[i]`` the perturbed transit when
    requested.
    """

    anchor_time: int
    times: np.ndarray
    linear: np.ndarray
    nonlinear: np.ndarray | None = None


def orbit_table(bundle: SystemBundle, n: int, x, lo: int, hi: int,
                with_nonlinear: bool = False, tol_inv: float = 1e-12) -> OrbitTable:
    times = np.arange(lo, hi + 1)
    lin = linear_orbit(bundle, n, x, lo, hi)
    nl = None
    if with_nonlinear:
        nl = np.empty_like(lin)
        nl[n - lo] = np.asarray(x, dtype=float)
        for j in range(n, hi):
            nl[j - lo + 1] = nonlinear_step(bundle, j, nl[j - lo])
        for j in range(n, lo, -1):
            nl[j - lo - 1], _ = nonlinear_inverse_step(bundle, j - 1, nl[j - lo], tol_inv)
    return OrbitTable(n, times, lin, nl)


# ---------------------------------------------------------------------------
# continuous transits (classical RK4, fixed step)

def _rk4_span(t0: float, t1: float, step: float):
    span = t1 - t0
    n = max(1, int(np.ceil(abs(span) / step - 1e-12)))
    return n, span / n


def ct_linear_transit(bundle: SystemBundle, t: float, s: float, x=None,
                      step: float | None = None):
    """Evolution of the linear coefficient ODE from time ``s`` to time ``t``.

    With ``x`` given, returns the transported state; otherwise the full
    transfer matrix.  Backward transits integrate with a negative step.
    """
    step = bundle.solver.ode_step if step is None else float(step)
    d = bundle.dim
    state = np.eye(d) if x is None else np.asarray(x, dtype=float).copy()
    if t == s:
        return state
    n, h = _rk4_span(s, t, step)
    A = bundle.linear.matrix
    for _ in range(n):
        k1 = A @ state
        k2 = A @ (state + (h / 2) * k1)
        k3 = A @ (state + (h / 2) * k2)
        k4 = A @ (state + h * k3)
        state = state + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def ct_nonlinear_transit(bundle: SystemBundle, t: float, s: float, x,
                         step: float | None = None) -> np.ndarray:
    """Evolution of the perturbed ODE ``x' = A(r) x + f(r, x)`` from ``s`` to ``t``."""
    step = bundle.solver.ode_step if step is None else float(step)
    state = np.asarray(x, dtype=float).copy()
    if t == s:
        return state
    n, h = _rk4_span(s, t, step)
    A = bundle.linear.matrix
    f = bundle.perturbation.value
    if bundle.perturbation.is_zero:
        return ct_linear_transit(bundle, t, s, x, step)

    def rhs(r, z):
        return A @ z + f(r, z)

    tj = s
    for _ in range(n):
        k1 = rhs(tj, state)
        k2 = rhs(tj + h / 2, state + (h / 2) * k1)
        k3 = rhs(tj + h / 2, state + (h / 2) * k2)
        k4 = rhs(tj + h, state + h * k3)
        state = state + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        tj += h
    return state


def _rk4_batch_step(bundle: SystemBundle, ts: np.ndarray, h: np.ndarray,
                    z: np.ndarray, with_f: bool) -> np.ndarray:
    """One RK4 step, per-sample times ``ts`` and step sizes ``h``."""
    A = bundle.linear.matrix
    if with_f:
        f = bundle.perturbation.value

        def rhs(r, w):
            return w @ A.T + f(r, w)
    else:
        def rhs(r, w):
            return w @ A.T

    hh = h[:, None] if np.ndim(h) else h
    k1 = rhs(ts, z)
    k2 = rhs(ts + h / 2, z + (hh / 2) * k1)
    k3 = rhs(ts + h / 2, z + (hh / 2) * k2)
    k4 = rhs(ts + h, z + hh * k3)
    return z + (hh / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _ct_transits(bundle, ts, ss, xs, step, with_f) -> np.ndarray:
    """Samples sharing a step count march together with per-sample step sizes."""
    ts = np.asarray(ts, dtype=float)
    ss = np.asarray(ss, dtype=float)
    out = np.array(xs, dtype=float, copy=True).reshape(ts.size, bundle.dim)
    spans = ts - ss
    counts = np.maximum(1, np.ceil(np.abs(spans) / step - 1e-12).astype(int))
    counts[spans == 0.0] = 0
    for n in np.unique(counts):
        if n == 0:
            continue
        sel = counts == n
        h = spans[sel] / n
        z = out[sel]
        tj = ss[sel].copy()
        for _ in range(int(n)):
            z = _rk4_batch_step(bundle, tj, h, z, with_f)
            tj = tj + h
        out[sel] = z
    return out


def ct_linear_transits(bundle: SystemBundle, ts, ss, xs,
                       step: float | None = None) -> np.ndarray:
    """Batched linear transits; samples with equal spans share the marching."""
    step = bundle.solver.ode_step if step is None else float(step)
    return _ct_transits(bundle, ts, ss, xs, step, False)


def ct_nonlinear_transits(bundle: SystemBundle, ts, ss, xs,
                          step: float | None = None) -> np.ndarray:
    """Batched perturbed transits; samples with equal spans share the marching."""
    step = bundle.solver.ode_step if step is None else float(step)
    return _ct_transits(bundle, ts, ss, xs, step,
                        not bundle.perturbation.is_zero)
