"""Continuous-time conjugacy displacements on propagator grids.

The displacement ``h(t, x)`` solves the same fixed-point equation as its
discrete sibling, with sums replaced by integrals: the contracting part
accumulates forward from ``0``, the expanding part backward from a horizon
``T_hi = max_anchor + L`` chosen so the dropped tail meets its share of the
error budget.  On a uniform grid both branches reduce to one-step
recurrences ``w_{j+1} = Phi_j w_j + q_j`` with Simpson source cells

    q_j = (h/6) (Phi_j g_j + 4 Psi_j g_{j+1/2} + g_{j+1}),

midpoint values interpolated cubically from the node samples, so each
Picard sweep is two blocked scans over the grid.  The companion ``hbar``
needs one pass only: ``g`` rides the perturbed orbit through ``(t, x)``.

Error estimates stack three accounted terms: the Picard remainder (a-priori
a-posteriori minimum), the truncation tail (fed back through the sweeps for
``h``), and an O(step^4) quadrature allowance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certificate import Certificate, TailGate, envelope_tail_continuous
from .conjugacy import _eval_f_grid, _require_passed, picard_iteration_count
from .ctgrid import _rk4_matrix_steps, propagator_grid
from .errors import NoDecayDetected
from .system import CENTER, CONTINUOUS, STABLE, UNSTABLE, SystemBundle

_WINDOW_CAP = 50.0     # longest admissible truncation window, in time units
_PROBE_STEP = 0.01     # substep for unit-interval probe propagators
_ANCHOR_BUCKET = 4.0


def _require_continuous(bundle: SystemBundle) -> None:
    if bundle.kind != CONTINUOUS:
        raise ValueError(f"expected a continuous-time system, got kind {bundle.kind!r}")


@dataclass(frozen=True)
class CtEvaluation:
    """One continuous-time displacement evaluation with its error budget."""
    anchor: float            # grid node actually used
    value: np.ndarray
    error_estimate: float
    sweeps: int
    step: float
    t_hi: float
    snap: float              # distance from the requested time to the anchor
    window: float
    sweep_ratios: tuple
    picard_bound: float
    tail_bound: float
    quad_bound: float


# ---------------------------------------------------------------------------
# window planning

def _unit_propagators(bundle: SystemBundle, count: int) -> np.ndarray:
    """``T(u+1, u)`` for ``u = 0..count-1``, cached and grown on demand."""
    m = int(round(1.0 / _PROBE_STEP))
    key = ("ctunits",)
    units = bundle._caches.get(key)
    have = 0 if units is None else units.shape[0]
    if have < count:
        want = max(count, 2 * have)
        d = bundle.dim
        starts = ((have + np.arange(want - have))[:, None]
                  + _PROBE_STEP * np.arange(m)[None, :]).reshape(-1)
        steps = _rk4_matrix_steps(bundle, starts, _PROBE_STEP)
        steps = steps.reshape(want - have, m, d, d)
        prod = steps[:, 0]
        for j in range(1, m):
            prod = steps[:, j] @ prod
        units = prod if units is None else np.concatenate([units, prod])
        bundle._caches[key] = units
    return units


def _ct_scale_window(bundle: SystemBundle, label: str, t_hi: float, budget: float):
    """Window length past the anchor for one expanding scale, with its tail."""
    env = bundle.envelope(label)
    if env.decay is not None:
        # nu forms are nonincreasing in time, so anchor 0 dominates
        t = envelope_tail_continuous(env.nu, env.decay, 0.0, 0.0)
        if math.isfinite(t):
            L = 0.0
            while t > budget:
                L += 1.0
                if L > _WINDOW_CAP:
                    raise NoDecayDetected(
                        f"scale {label}: declared envelope needs a window over "
                        f"{_WINDOW_CAP:g} time units to meet the tail budget")
                t = envelope_tail_continuous(env.nu, env.decay, 0.0, L)
            return L, t
    deco = bundle.decomposition
    mask, P = deco.mask(label), deco.projector(label)
    rhs = P if mask is None else P[:, mask]
    na = int(math.floor(t_hi + 1e-9)) + 1
    units = _unit_propagators(bundle, na + int(_WINDOW_CAP))
    ts = np.arange(na)
    gate = TailGate(context=f"scale {label} window")
    M = None
    o = 0
    while True:
        o += 1
        if o > _WINDOW_CAP:
            raise NoDecayDetected(
                f"scale {label}: no usable decay within {_WINDOW_CAP:g} time units")
        M = units[ts + o - 1] if M is None else units[ts + o - 1] @ M
        Z = np.linalg.solve(M, rhs)
        terms = np.linalg.svd(Z, compute_uv=False)[:, 0]
        gate.feed(float(np.max(terms * env.nu.at(ts + o))))
        t = gate.tail()
        if t is not None and t <= budget:
            return float(o), t


def _plan_window(bundle: SystemBundle, t_hi: float, budget: float):
    """Common window extension for all expanding scales, anchors up to ``t_hi``."""
    labels = [s.label for s in bundle.decomposition.scales if s.klass == UNSTABLE]
    if not labels:
        return 0.0, 0.0
    bucket = _ANCHOR_BUCKET * math.ceil(max(t_hi, 1.0) / _ANCHOR_BUCKET)
    key = ("ctwindow", bucket, f"{budget:.6e}")
    hit = bundle._caches.get(key)
    if hit is None:
        per = budget / len(labels)
        L = 0.0
        total = 0.0
        for label in labels:
            Lk, tk = _ct_scale_window(bundle, label, bucket, per)
            L = max(L, Lk)
            total += tk
        hit = (L, total)
        bundle._caches[key] = hit
    return hit


# ---------------------------------------------------------------------------
# quadrature cells and orbits

def _midpoints(g: np.ndarray) -> np.ndarray:
    """Cubic interpolation of node samples to cell midpoints (axis 1)."""
    S, np1, d = g.shape
    n = np1 - 1
    if n < 3:
        return 0.5 * (g[:, :-1] + g[:, 1:])
    mid = np.empty((S, n, d))
    mid[:, 1:n - 1] = (-g[:, :n - 2] + 9.0 * g[:, 1:n - 1]
                       + 9.0 * g[:, 2:n] - g[:, 3:]) / 16.0
    mid[:, 0] = (5.0 * g[:, 0] + 15.0 * g[:, 1] - 5.0 * g[:, 2] + g[:, 3]) / 16.0
    mid[:, n - 1] = (5.0 * g[:, n] + 15.0 * g[:, n - 1]
                     - 5.0 * g[:, n - 2] + g[:, n - 3]) / 16.0
    return mid


def _source_cells(grid, g: np.ndarray, n: int) -> np.ndarray:
    """Simpson cells ``q_j ~ int_{s_j}^{s_{j+1}} T(s_{j+1}, s) g(s) ds``."""
    mid = _midpoints(g)
    left = np.einsum("jkl,sjl->sjk", grid.phi[:n], g[:, :-1])
    half = np.einsum("jkl,sjl->sjk", grid.psi[:n], mid)
    return (grid.h / 6.0) * (left + 4.0 * half + g[:, 1:])


def _rk4_state(bundle: SystemBundle, t: float, h: float, z: np.ndarray) -> np.ndarray:
    """One RK4 step of ``x' = A(t) x + f(t, x)`` for a batch of states."""
    A0 = bundle.linear.at_times(t)
    Am = bundle.linear.at_times(t + h / 2.0)
    A1 = bundle.linear.at_times(t + h)
    f = bundle.perturbation.value
    k1 = z @ A0.T + f(t, z)
    w = z + (h / 2.0) * k1
    k2 = w @ Am.T + f(t + h / 2.0, w)
    w = z + (h / 2.0) * k2
    k3 = w @ Am.T + f(t + h / 2.0, w)
    w = z + h * k3
    k4 = w @ A1.T + f(t + h, w)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _nonlinear_orbits(bundle: SystemBundle, grid, j0s: np.ndarray,
                      xs: np.ndarray, n: int) -> np.ndarray:
    """Perturbed orbits through ``(s_{j0}, x)`` on nodes ``0..n``, batched.

    Marches every sample forward then backward with the same masked steps;
    backward values can grow like the inverse flow, but the integrands they
    feed stay within the declared bounds.
    """
    S = len(j0s)
    z = np.zeros((S, n + 1, bundle.dim))
    z[np.arange(S), j0s] = xs
    h = grid.h
    for j in range(n):
        sel = j0s <= j
        if sel.any():
            z[sel, j + 1] = _rk4_state(bundle, grid.nodes[j], h, z[sel, j])
    for j in range(n, 0, -1):
        sel = j0s >= j
        if sel.any():
            z[sel, j - 1] = _rk4_state(bundle, grid.nodes[j], -h, z[sel, j])
    return z


# ---------------------------------------------------------------------------
# displacement evaluations

def _setup(bundle, ts, points, tol, step, budget_scale):
    solver = bundle.solver
    tol = solver.tol if tol is None else float(tol)
    h = solver.ode_step if step is None else float(step)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if ts.size and float(ts.min()) < 0.0:
        raise ValueError("evaluation times must be non-negative")
    xs = np.asarray(points, dtype=float).reshape(ts.size, bundle.dim)
    t_anchor = float(ts.max()) if ts.size else 0.0
    L, tail_raw = _plan_window(bundle, t_anchor, budget_scale * tol)
    n_node = int(math.ceil((t_anchor + L) / h - 1e-9))
    grid = propagator_grid(bundle, h, t_anchor + L)
    j0s = np.array([grid.index(t) for t in ts], dtype=int)
    snaps = np.abs(ts - grid.nodes[j0s])
    return tol, h, ts, xs, L, tail_raw, n_node, grid, j0s, snaps


def _quad_allowance(c_nu: float, h: float, t_hi: float) -> float:
    return (1.0 + c_nu) * h ** 4 * max(1.0, t_hi)


def eval_h_ct_batch(bundle: SystemBundle, cert: Certificate, times, points,
                    tol: float | None = None, step: float | None = None):
    """Displacements of the linear-to-perturbed map at several ``(t, x)``."""
    _require_continuous(bundle)
    _require_passed(cert)
    lam, c_nu = cert.lambda_total, cert.c_nu
    tol, h, ts, xs, L, tail_raw, n, grid, j0s, snaps = _setup(
        bundle, times, points, tol, step, 0.5 * (1.0 - lam))
    tail_bound = tail_raw / (1.0 - lam)

    orbits = np.stack([grid.orbit(int(j0), x, n) for j0, x in zip(j0s, xs)]) \
        if ts.size else np.zeros((0, n + 1, bundle.dim))
    nodes = grid.nodes[:n + 1]
    Ps = bundle.decomposition.class_projector(STABLE)
    Pu = bundle.decomposition.class_projector(UNSTABLE)

    m_cap = picard_iteration_count(lam, c_nu, 0.5 * tol)
    target = math.inf if lam == 0.0 else 0.5 * tol * (1.0 - lam) / lam
    harr = np.zeros_like(orbits)
    delta = math.inf
    step_delta = np.zeros(ts.size)
    ratios = []
    sweeps = 0
    while sweeps < m_cap and ts.size:
        F = _eval_f_grid(bundle, nodes, orbits + harr)
        hn = (grid.forward_inhom(_source_cells(grid, F @ Ps.T, n))
              + grid.backward_inhom(_source_cells(grid, F @ Pu.T, n)))
        step_delta = np.linalg.norm(hn - harr, axis=2).max(axis=1)
        new_delta = float(step_delta.max())
        if math.isfinite(delta) and delta > 0.0:
            ratios.append(new_delta / delta)
        delta = new_delta
        harr = hn
        sweeps += 1
        if delta <= target or delta == 0.0:
            break

    quad = _quad_allowance(c_nu, h, float(nodes[-1]))
    apriori = lam ** sweeps * c_nu / (1.0 - lam)
    out = []
    for i, j0 in enumerate(j0s):
        picard = min(apriori, lam / (1.0 - lam) * float(step_delta[i])) \
            if sweeps else apriori
        out.append(CtEvaluation(
            anchor=float(grid.nodes[j0]), value=harr[i, j0].copy(),
            error_estimate=picard + tail_bound + quad, sweeps=sweeps,
            step=h, t_hi=float(nodes[-1]), snap=float(snaps[i]), window=L,
            sweep_ratios=tuple(ratios), picard_bound=picard,
            tail_bound=tail_bound, quad_bound=quad))
    return out


def eval_h_ct(bundle: SystemBundle, cert: Certificate, t: float, x,
              tol: float | None = None, step: float | None = None) -> CtEvaluation:
    return eval_h_ct_batch(bundle, cert, [t], [x], tol, step)[0]


def eval_hbar_ct_batch(bundle: SystemBundle, cert: Certificate, times, points,
                       tol: float | None = None, step: float | None = None):
    """Displacements of the perturbed-to-linear map at several ``(t, x)``.

    Single pass: the integrand rides the perturbed orbit through each
    ``(t, x)``, so one orbit march and one pair of scans suffice.
    """
    _require_continuous(bundle)
    _require_passed(cert)
    c_nu = cert.c_nu
    tol, h, ts, xs, L, tail_raw, n, grid, j0s, snaps = _setup(
        bundle, times, points, tol, step, 0.5)

    nodes = grid.nodes[:n + 1]
    Ps = bundle.decomposition.class_projector(STABLE)
    Pu = bundle.decomposition.class_projector(UNSTABLE)
    if ts.size:
        orbits = _nonlinear_orbits(bundle, grid, j0s, xs, n)
        F = _eval_f_grid(bundle, nodes, orbits)
        hbar = -(grid.forward_inhom(_source_cells(grid, F @ Ps.T, n))
                 + grid.backward_inhom(_source_cells(grid, F @ Pu.T, n)))
    else:
        hbar = np.zeros((0, n + 1, bundle.dim))

    quad = _quad_allowance(c_nu, h, float(nodes[-1]))
    out = []
    for i, j0 in enumerate(j0s):
        out.append(CtEvaluation(
            anchor=float(grid.nodes[j0]), value=hbar[i, j0].copy(),
            error_estimate=tail_raw + quad, sweeps=1,
            step=h, t_hi=float(nodes[-1]), snap=float(snaps[i]), window=L,
            sweep_ratios=(), picard_bound=0.0,
            tail_bound=tail_raw, quad_bound=quad))
    return out


def eval_hbar_ct(bundle: SystemBundle, cert: Certificate, t: float, x,
                 tol: float | None = None, step: float | None = None) -> CtEvaluation:
    return eval_hbar_ct_batch(bundle, cert, [t], [x], tol, step)[0]


# ---------------------------------------------------------------------------
# full maps and deviation

def apply_H_ct(bundle: SystemBundle, cert: Certificate, t: float, x,
               tol: float | None = None, step: float | None = None) -> np.ndarray:
    """Image of ``x`` under the map conjugating linear to perturbed dynamics."""
    return np.asarray(x, dtype=float) + eval_h_ct(bundle, cert, t, x, tol, step).value


def apply_Hbar_ct(bundle: SystemBundle, cert: Certificate, t: float, x,
                  tol: float | None = None, step: float | None = None) -> np.ndarray:
    """Image of ``x`` under the map conjugating perturbed to linear dynamics."""
    return np.asarray(x, dtype=float) + eval_hbar_ct(bundle, cert, t, x, tol, step).value


def deviation_ct(bundle: SystemBundle, t: float, x) -> np.ndarray:
    """Uncontrolled-direction forcing ``+P^c f(t, x)`` kept by the conjugated flow."""
    _require_continuous(bundle)
    Pc = bundle.decomposition.class_projector(CENTER)
    fx = bundle.perturbation.value(float(t), np.asarray(x, dtype=float))
    return Pc @ fx
