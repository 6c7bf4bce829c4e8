"""System model: scenario bundles, scale decompositions, and envelope data.

A scenario bundle collects everything the certification and conjugacy layers
need: the linear part (step matrices or a coefficient provider), a bounded
perturbation, a finite family of spectral scales with projections, declared
per-scale envelope data, and solver parameters.  Bundles are built from a
key-value configuration document (YAML) or from one of the builtin demo
scenarios, and can be emitted back to an equivalent document.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, SingularStepError

DISCRETE = "discrete"
CONTINUOUS = "continuous"

STABLE = "stable"
UNSTABLE = "unstable"
CENTER = "center"

FAMILIES = ("zero", "constant", "scaled_sine", "scaled_tanh", "decayed_scaled_sine")


# ---------------------------------------------------------------------------
# envelopes

@dataclass(frozen=True)
class Envelope:
    """Scalar envelope of a time index.

    Forms: ``constant`` gives ``value``; ``geometric`` gives
    ``value * rate**n`` (discrete time); ``exponential`` gives
    ``value * exp(-rate * t)`` (continuous time).
    """

    form: str
    value: float
    rate: float = 1.0

    def at(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return np.broadcast_to(np.float64(self.value), t.shape).copy()
        if self.form == "geometric":
            return self.value * self.rate ** t
        if self.form == "exponential":
            return self.value * np.exp(-self.rate * t)
        raise ConfigError(f"envelope form '{self.form}' unknown")

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0


def _envelope_from(node, path: str, kind: str) -> Envelope:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping with 'form' and 'value'")
    form = node.get("form", "constant")
    if form not in ("constant", "geometric", "exponential"):
        raise ConfigError(f"{path}.form: unknown form '{form}'")
    if form == "geometric" and kind == CONTINUOUS:
        raise ConfigError(f"{path}.form: geometric envelopes are discrete-time only")
    if form == "exponential" and kind == DISCRETE:
        raise ConfigError(f"{path}.form: exponential envelopes are continuous-time only")
    value = _number(node, "value", path)
    rate = float(node.get("rate", 1.0))
    if value < 0:
        raise ConfigError(f"{path}.value: must be >= 0")
    if form == "geometric" and not 0 < rate <= 1:
        raise ConfigError(f"{path}.rate: geometric rate must lie in (0, 1]")
    if form == "exponential" and rate < 0:
        raise ConfigError(f"{path}.rate: exponential rate must be >= 0")
    return Envelope(form, value, rate)


# ---------------------------------------------------------------------------
# solver parameters

@dataclass(frozen=True)
class SolverParams:
    """Tolerances, horizons and sampling defaults used across the package."""

    tol: float = 1e-6
    tail_eps: float = 1e-10
    horizon: int = 256
    t_max: float = 50.0
    ode_step: float = 1e-3
    sup_step: float = 0.5
    proj_eps: float = 1e-10
    verdict_slack: float = 1e-9
    ball_radius: float = 10.0
    samples: int = 100
    seed: int = 1

    def override(self, **kw) -> "SolverParams":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


_SOLVER_KEYS = {
    "tol": "tol",
    "tail-eps": "tail_eps",
    "horizon": "horizon",
    "t-max": "t_max",
    "ode-step": "ode_step",
    "sup-step": "sup_step",
    "proj-eps": "proj_eps",
    "verdict-slack": "verdict_slack",
    "ball-radius": "ball_radius",
    "samples": "samples",
    "seed": "seed",
}


# ---------------------------------------------------------------------------
# linear part

class LinearPart:
    """Step matrices ``A_n`` (discrete) or coefficients ``A(t)`` (continuous).

    Three declared forms: a constant diagonal, a constant matrix, or (discrete
    only) a per-step table loaded from a CSV file whose row ``n`` holds the
    ``d*d`` row-major entries of ``A_n``.  Table rows past the end repeat the
    last row, so finite tables describe eventually-constant systems.

    Discrete step matrices are validated lazily against ``sigma_min_floor``;
    a violation raises :class:`SingularStepError`.
    """

    def __init__(self, kind, dim, form, data, sigma_min_floor=1e-12):
        self.kind = kind
        self.dim = int(dim)
        self.form = form
        self.sigma_min_floor = float(sigma_min_floor)
        if form == "constant-diagonal":
            self.diagonal = np.asarray(data, dtype=float).reshape(self.dim)
            self.matrix = np.diag(self.diagonal)
        elif form == "constant-matrix":
            self.matrix = np.asarray(data, dtype=float).reshape(self.dim, self.dim)
            self.diagonal = None
        elif form == "per-step-file":
            table = np.asarray(data, dtype=float)
            if table.ndim == 1:
                table = table.reshape(1, -1)
            if table.shape[1] != self.dim * self.dim:
                raise ConfigError(
                    f"system.linear: table rows have {table.shape[1]} entries, "
                    f"expected {self.dim * self.dim}")
            self.table = table.reshape(-1, self.dim, self.dim)
            self.diagonal = None
        else:
            raise ConfigError(f"system.linear.form: unknown form '{form}'")
        self._checked_to = 0

    @property
    def is_diagonal(self) -> bool:
        return self.diagonal is not None

    @property
    def is_constant(self) -> bool:
        return self.form != "per-step-file"

    # -- discrete access ----------------------------------------------------

    def steps(self, lo: int, hi: int) -> np.ndarray:
        """Stack ``A_lo, ..., A_{hi-1}`` with shape ``(hi-lo, d, d)``."""
        n = max(hi - lo, 0)
        if self.is_constant:
            out = np.broadcast_to(self.matrix, (n, self.dim, self.dim)).copy()
        else:
            idx = np.clip(np.arange(lo, hi), 0, len(self.table) - 1)
            out = self.table[idx]
        self._check(out)
        return out

    def step(self, n: int) -> np.ndarray:
        return self.steps(n, n + 1)[0]

    def inverses(self, lo: int, hi: int) -> np.ndarray:
        return np.linalg.inv(self.steps(lo, hi))

    def _check(self, stack: np.ndarray) -> None:
        if self.kind != DISCRETE or stack.size == 0:
            return
        smin = np.linalg.svd(stack, compute_uv=False)[..., -1]
        if np.any(smin < self.sigma_min_floor):
            bad = int(np.argmax(smin < self.sigma_min_floor))
            raise SingularStepError(
                f"step matrix has smallest singular value {smin[bad]:.3e} "
                f"below floor {self.sigma_min_floor:.3e}")

    # -- continuous access --------------------------------------------------

    def at_times(self, ts) -> np.ndarray:
        """Coefficient matrices ``A(t)`` stacked over ``ts``."""
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to(self.matrix, ts.shape + (self.dim, self.dim)).copy()

    def diag_at_times(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        return np.broadcast_to(self.diagonal, ts.shape + (self.dim,)).copy()

    def norm_bound(self) -> float:
        """Upper bound on the spectral norm of any step/coefficient matrix."""
        if self.is_constant:
            return float(np.linalg.norm(self.matrix, 2))
        return float(np.linalg.svd(self.table, compute_uv=False)[..., 0].max())

    def inverse_norm_bound(self) -> float:
        if self.is_constant:
            return float(np.linalg.norm(np.linalg.inv(self.matrix), 2))
        smin = np.linalg.svd(self.table, compute_uv=False)[..., -1].min()
        return float(1.0 / smin)


# ---------------------------------------------------------------------------
# perturbation part

@dataclass(frozen=True)
class PerturbationEntry:
    component: int          # 0-based output coordinate
    family: str
    amplitude: float
    lipschitz: float
    source: int             # 0-based input coordinate
    rate: float             # geometric ratio / exponential rate of the decay


class PerturbationPart:
    """Parametric bounded perturbation built from per-component entries.

    Each entry realizes one output coordinate as ``a(t) * shape(theta * x_src)``
    where ``theta = lipschitz / amplitude``, so the realized sup norm equals the
    amplitude envelope and the realized Lipschitz constant the Lipschitz
    envelope.  Discrete amplitude envelopes are indexed so that the map applied
    at step ``n`` has sup norm ``amplitude * rate**(n+1)``, matching bounds
    declared against the step it lands on.
    """

    def __init__(self, kind: str, dim: int, entries):
        self.kind = kind
        self.dim = int(dim)
        self.entries = tuple(entries)
        # flattened live entries for fast evaluation
        live = [e for e in self.entries if e.family != "zero" and e.amplitude != 0.0]
        self._comp = np.array([e.component for e in live], dtype=int)
        self._src = np.array([e.source for e in live], dtype=int)
        self._amp0 = np.array([e.amplitude for e in live])
        self._rate = np.array([e.rate for e in live])
        self._theta = np.array([0.0 if e.family == "constant" else e.lipschitz / e.amplitude
                                for e in live])
        code = {"constant": 0, "scaled_sine": 1, "decayed_scaled_sine": 1, "scaled_tanh": 2}
        self._code = np.array([code[e.family] for e in live], dtype=int)
        self._sine = self._code == 1
        self._tanh = self._code == 2

    @property
    def is_zero(self) -> bool:
        return self._comp.size == 0

    def _amps(self, ts):
        if self.kind == DISCRETE:
            return self._amp0 * self._rate ** (np.asarray(ts, dtype=float)[..., None] + 1.0)
        return self._amp0 * np.exp(-self._rate * np.asarray(ts, dtype=float)[..., None])

    def value(self, times, states) -> np.ndarray:
        """Evaluate ``f(t, x)`` batched: ``(m,), (m, d) -> (m, d)``."""
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        X = states[None, :] if single else states
        out = np.zeros_like(X)
        if self._comp.size:
            ts = np.broadcast_to(np.asarray(times, dtype=float), X.shape[:1])
            vals = self._amps(ts)
            sv = self._theta * X[:, self._src]
            if self._sine.any():
                vals = np.where(self._sine, vals * np.sin(sv), vals)
            if self._tanh.any():
                vals = np.where(self._tanh, vals * np.tanh(sv), vals)
            for j, c in enumerate(self._comp):
                out[:, c] += vals[:, j]
        return out[0] if single else out

    def lipschitz_bound(self, times) -> np.ndarray:
        """Pointwise upper bound on ``||Df(t, .)||_2`` (Frobenius of row bounds)."""
        ts = np.asarray(times, dtype=float)
        if not self._comp.size:
            return np.zeros_like(ts)
        lips = self._amps(ts) * self._theta
        return np.sqrt((lips ** 2).sum(axis=-1))

    def sup_bound(self, times) -> np.ndarray:
        ts = np.asarray(times, dtype=float)
        if not self._comp.size:
            return np.zeros_like(ts)
        return np.sqrt((self._amps(ts) ** 2).sum(axis=-1))


# ---------------------------------------------------------------------------
# decomposition

@dataclass(frozen=True)
class Scale:
    label: str
    klass: str
    coordinates: tuple | None       # 0-based coordinate mask, if coordinate form
    matrix: np.ndarray | None = field(default=None, compare=False)

    def projector(self, dim: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        P = np.zeros((dim, dim))
        for c in self.coordinates:
            P[c, c] = 1.0
        return P


class Decomposition:
    """Finite family of labeled scales with (constant-in-time) projections."""

    def __init__(self, dim: int, scales):
        self.dim = int(dim)
        self.scales = tuple(scales)
        self.labels = tuple(s.label for s in self.scales)
        by = {}
        for s in self.scales:
            if s.label in by:
                raise ConfigError(f"decomposition: scale {s.label} declared twice")
            by[s.label] = s
        self._by = by

    def __getitem__(self, label: str) -> Scale:
        return self._by[label]

    def labels_of(self, klass: str):
        return tuple(s.label for s in self.scales if s.klass == klass)

    @property
    def stable(self):
        return self.labels_of(STABLE)

    @property
    def unstable(self):
        return self.labels_of(UNSTABLE)

    @property
    def center(self):
        return self.labels_of(CENTER)

    @property
    def all_coordinate(self) -> bool:
        return all(s.coordinates is not None for s in self.scales)

    def projector(self, label: str, time=None) -> np.ndarray:
        return self._by[label].projector(self.dim)

    def projectors(self, label: str, times) -> np.ndarray:
        ts = np.asarray(times, dtype=float)
        P = self.projector(label)
        return np.broadcast_to(P, ts.shape + P.shape).copy()

    def mask(self, label: str):
        s = self._by[label]
        if s.coordinates is None:
            return None
        m = np.zeros(self.dim, dtype=bool)
        m[list(s.coordinates)] = True
        return m

    def class_projector(self, klass: str) -> np.ndarray:
        P = np.zeros((self.dim, self.dim))
        for s in self.scales:
            if s.klass == klass:
                P += s.projector(self.dim)
        return P

    def class_mask(self, klass: str):
        if not self.all_coordinate:
            return None
        m = np.zeros(self.dim, dtype=bool)
        for s in self.scales:
            if s.klass == klass:
                for c in s.coordinates:
                    m[c] = True
        return m


def validate_decomposition(decomp: Decomposition, times=(0,), eps: float = 1e-10):
    """Check projection algebra at the given times.

    Returns a list of violation strings (empty when the family is a valid
    resolution of the identity to tolerance ``eps``): sum to identity,
    idempotency, and pairwise annihilation.
    """
    violations = []
    I = np.eye(decomp.dim)
    for t in times:
        Ps = {k: decomp.projector(k, t) for k in decomp.labels}
        dev = np.linalg.norm(sum(Ps.values()) - I, 2)
        if dev > eps:
            violations.append(f"sum P != Id at time {t} (deviation {dev:.3e})")
        for k, P in Ps.items():
            dev = np.linalg.norm(P @ P - P, 2)
            if dev > eps:
                violations.append(f"P[{k}] not idempotent at time {t} (deviation {dev:.3e})")
        labels = list(decomp.labels)
        for i, k in enumerate(labels):
            for l in labels[i + 1:]:
                dev = max(np.linalg.norm(Ps[k] @ Ps[l], 2), np.linalg.norm(Ps[l] @ Ps[k], 2))
                if dev > eps:
                    violations.append(f"P[{k}]P[{l}] != 0 at time {t} (norm {dev:.3e})")
    return violations


# ---------------------------------------------------------------------------
# scale envelopes and the bundle

@dataclass(frozen=True)
class ScaleEnvelope:
    """Declared data for one stable/unstable scale.

    ``lam`` bounds the weighted moment sums, ``nu``/``mu`` bound the projected
    perturbation sup and Lipschitz constants, and ``decay`` (optional) is a
    declared transfer-decay envelope ``(value, rate)``: for discrete scales
    ``||A(n,l) P_l|| <= value * rate**(l-n)``, for continuous scales
    ``||T(t,s) P(s)|| <= value * exp(-rate * (s-t))`` on the expanding side.
    """

    lam: float
    nu: Envelope
    mu: Envelope
    decay: tuple | None = None


@dataclass(frozen=True)
class SystemBundle:
    kind: str
    dim: int
    linear: LinearPart = field(compare=False)
    perturbation: PerturbationPart = field(compare=False)
    decomposition: Decomposition = field(compare=False)
    envelopes: dict = field(compare=False)
    solver: SolverParams = SolverParams()
    name: str = ""
    config: dict = field(default_factory=dict, compare=False, repr=False)
    _caches: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    def envelope(self, label: str) -> ScaleEnvelope:
        return self.envelopes[label]

    def lambda_total(self) -> float:
        import math
        labels = self.decomposition.stable + self.decomposition.unstable
        return math.fsum(self.envelopes[k].lam for k in labels)

    def with_solver(self, **kw) -> "SystemBundle":
        return replace(self, solver=self.solver.override(**kw), _caches={})

    def with_config(self, mutate) -> "SystemBundle":
        """Rebuild the bundle from a mutated copy of its normalized config."""
        import copy
        cfg = copy.deepcopy(self.config)
        mutate(cfg)
        return load_config_dict(cfg, name=self.name)


# ---------------------------------------------------------------------------
# configuration parsing

def _number(node: dict, key: str, path: str) -> float:
    if key not in node:
        raise ConfigError(f"{path}.{key}: missing")
    v = node[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def _index(node: dict, key: str, path: str, dim: int, default=None) -> int:
    if key not in node:
        if default is None:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    v = node[key]
    if not isinstance(v, int) or isinstance(v, bool) or not 1 <= v <= dim:
        raise ConfigError(f"{path}.{key}: expected a coordinate in 1..{dim}, got {v!r}")
    return v - 1


def load_config_dict(cfg: dict, base_dir: str = ".", name: str = "") -> SystemBundle:
    """Build a :class:`SystemBundle` from a parsed configuration mapping."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration root: expected a mapping")
    for key in cfg:
        if key not in ("system", "decomposition", "envelopes", "solver"):
            raise ConfigError(f"{key}: unknown top-level key")

    system = cfg.get("system")
    if not isinstance(system, dict):
        raise ConfigError("system: missing or not a mapping")
    kind = system.get("kind")
    if kind not in (DISCRETE, CONTINUOUS):
        raise ConfigError(f"system.kind: expected 'discrete' or 'continuous', got {kind!r}")
    dim = system.get("dimension")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ConfigError(f"system.dimension: expected a positive integer, got {dim!r}")

    lin = system.get("linear")
    if not isinstance(lin, dict):
        raise ConfigError("system.linear: missing or not a mapping")
    form = lin.get("form")
    floor = float(lin.get("sigma-min-floor", 1e-12))
    if form == "per-step-file":
        if kind != DISCRETE:
            raise ConfigError("system.linear.form: per-step-file requires kind 'discrete'")
        path = lin.get("path")
        if not isinstance(path, str):
            raise ConfigError("system.linear.path: missing")
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        try:
            data = np.loadtxt(full, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"system.linear.path: cannot read '{path}' ({exc})") from exc
        linear = LinearPart(kind, dim, form, data, floor)
    elif form in ("constant-diagonal", "constant-matrix"):
        values = lin.get("values")
        if values is None:
            raise ConfigError("system.linear.values: missing")
        try:
            linear = LinearPart(kind, dim, form, values, floor)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"system.linear.values: {exc}") from exc
    else:
        raise ConfigError(f"system.linear.form: unknown form '{form}'")

    entries = []
    for i, node in enumerate(system.get("perturbation", []) or []):
        path = f"system.perturbation[{i}]"
        if not isinstance(node, dict):
            raise ConfigError(f"{path}: expected a mapping")
        family = node.get("family")
        if family not in FAMILIES:
            raise ConfigError(f"{path}.family: unknown family '{family}'")
        comp = _index(node, "component", path, dim)
        if family == "zero":
            entries.append(PerturbationEntry(comp, family, 0.0, 0.0, 0, 1.0))
            continue
        amp = _number(node, "amplitude", path)
        lip = float(node.get("lipschitz", 0.0))
        if amp < 0 or lip < 0:
            raise ConfigError(f"{path}: amplitude and lipschitz must be >= 0")
        src = _index(node, "source", path, dim, default=0)
        rate = node.get("decay-rate")
        if family == "decayed_scaled_sine":
            if rate is None:
                raise ConfigError(f"{path}.decay-rate: required for decayed families")
        if rate is None:
            rate = 1.0 if kind == DISCRETE else 0.0
        rate = float(rate)
        if kind == DISCRETE and not 0 < rate <= 1:
            raise ConfigError(f"{path}.decay-rate: discrete rate must lie in (0, 1]")
        if kind == CONTINUOUS and rate < 0:
            raise ConfigError(f"{path}.decay-rate: continuous rate must be >= 0")
        if family == "constant" and lip != 0.0:
            raise ConfigError(f"{path}.lipschitz: constant family must have lipschitz 0")
        entries.append(PerturbationEntry(comp, family, amp, lip, src, rate))
    perturbation = PerturbationPart(kind, dim, entries)

    deco = cfg.get("decomposition")
    if not isinstance(deco, dict) or not isinstance(deco.get("scales"), list):
        raise ConfigError("decomposition.scales: missing or not a list")
    scales = []
    for i, node in enumerate(deco["scales"]):
        path = f"decomposition.scales[{i}]"
        if not isinstance(node, dict):
            raise ConfigError(f"{path}: expected a mapping")
        label = node.get("label")
        if label is None:
            raise ConfigError(f"{path}.label: missing")
        label = str(label)
        klass = node.get("class")
        if klass is None:
            raise ConfigError(f"{path}: scale {label} unclassified")
        if klass not in (STABLE, UNSTABLE, CENTER):
            raise ConfigError(f"{path}.class: unknown class '{klass}'")
        if "coordinates" in node:
            coords = node["coordinates"]
            if not isinstance(coords, list) or not coords:
                raise ConfigError(f"{path}.coordinates: expected a non-empty list")
            idx = []
            for c in coords:
                if not isinstance(c, int) or isinstance(c, bool) or not 1 <= c <= dim:
                    raise ConfigError(f"{path}.coordinates: entry {c!r} outside 1..{dim}")
                idx.append(c - 1)
            scales.append(Scale(label, klass, tuple(idx), None))
        elif "matrix" in node:
            M = np.asarray(node["matrix"], dtype=float)
            if M.shape != (dim, dim):
                raise ConfigError(f"{path}.matrix: expected shape ({dim}, {dim})")
            scales.append(Scale(label, klass, None, M))
        else:
            raise ConfigError(f"{path}: needs 'coordinates' or 'matrix'")
    decomposition = Decomposition(dim, scales)

    envelopes = {}
    for i, node in enumerate(cfg.get("envelopes", []) or []):
        path = f"envelopes[{i}]"
        if not isinstance(node, dict):
            raise ConfigError(f"{path}: expected a mapping")
        label = str(node.get("scale"))
        if label not in decomposition.labels:
            raise ConfigError(f"{path}.scale: unknown scale '{label}'")
        lam = _number(node, "lambda", path)
        if not 0 < lam < 1:
            raise ConfigError(f"{path}.lambda: must lie in (0, 1)")
        nu = _envelope_from(node.get("nu"), f"{path}.nu", kind)
        mu = _envelope_from(node.get("mu"), f"{path}.mu", kind)
        decay = None
        if "decay" in node and node["decay"] is not None:
            dn = node["decay"]
            value = _number(dn, "value", f"{path}.decay")
            rate = _number(dn, "rate", f"{path}.decay")
            if kind == DISCRETE and not 0 < rate < 1:
                raise ConfigError(f"{path}.decay.rate: discrete rate must lie in (0, 1)")
            if kind == CONTINUOUS and rate <= 0:
                raise ConfigError(f"{path}.decay.rate: continuous rate must be > 0")
            decay = (value, rate)
        envelopes[label] = ScaleEnvelope(lam, nu, mu, decay)

    for label in decomposition.stable + decomposition.unstable:
        if label not in envelopes:
            raise ConfigError(
                f"envelopes: scale {label} missing (required for stable/unstable scales)")
    for label in envelopes:
        if decomposition[label].klass == CENTER:
            raise ConfigError(f"envelopes: scale {label} is a center scale and takes none")

    solver_node = cfg.get("solver", {}) or {}
    if not isinstance(solver_node, dict):
        raise ConfigError("solver: expected a mapping")
    kw = {}
    for key, val in solver_node.items():
        if key not in _SOLVER_KEYS:
            raise ConfigError(f"solver.{key}: unknown key")
        kw[_SOLVER_KEYS[key]] = val
    solver = SolverParams().override(**kw)

    normalized = _normalize_config(cfg)
    return SystemBundle(kind, dim, linear, perturbation, decomposition,
                        envelopes, solver, name=name, config=normalized)


def _normalize_config(cfg: dict) -> dict:
    import copy
    return copy.deepcopy(cfg)


def load_configuration(path: str) -> SystemBundle:
    """Load a scenario bundle from a YAML configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse '{path}': {exc}") from exc
    return load_config_dict(cfg, base_dir=os.path.dirname(os.path.abspath(path)),
                            name=os.path.basename(path))


def emit_configuration(bundle: SystemBundle) -> str:
    """Serialize a bundle back to an equivalent YAML document.

    Loading the emitted text reproduces provider values bit-identically, since
    numeric leaves round-trip through their shortest decimal representation.
    """
    buf = io.StringIO()
    yaml.safe_dump(bundle.config, buf, sort_keys=False, default_flow_style=None)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# builtin scenarios

def _exm_discrete_config():
    return {
        "system": {
            "kind": "discrete",
            "dimension": 5,
            "linear": {"form": "constant-diagonal", "values": [0.5, 1.0, 1.0, 1.0, 2.0]},
            "perturbation": [
                {"component": 1, "family": "scaled_tanh", "amplitude": 1.0,
                 "lipschitz": 0.1, "source": 2},
                {"component": 2, "family": "decayed_scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "decay-rate": 0.5, "source": 3},
                {"component": 3, "family": "scaled_sine", "amplitude": 1.0,
                 "lipschitz": 1.0, "source": 1},
                {"component": 4, "family": "decayed_scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "decay-rate": 0.5, "source": 5},
                {"component": 5, "family": "scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.1, "source": 1},
            ],
        },
        "decomposition": {
            "scales": [
                {"label": 1, "class": "stable", "coordinates": [1]},
                {"label": 2, "class": "stable", "coordinates": [2]},
                {"label": 3, "class": "center", "coordinates": [3]},
                {"label": 4, "class": "unstable", "coordinates": [4]},
                {"label": 5, "class": "unstable", "coordinates": [5]},
            ],
        },
        "envelopes": [
            {"scale": 1, "lambda": 0.2,
             "nu": {"form": "constant", "value": 1.0},
             "mu": {"form": "constant", "value": 0.1},
             "decay": {"value": 1.0, "rate": 0.5}},
            {"scale": 2, "lambda": 0.2,
             "nu": {"form": "geometric", "value": 1.0, "rate": 0.5},
             "mu": {"form": "geometric", "value": 0.2, "rate": 0.5}},
            {"scale": 4, "lambda": 0.2,
             "nu": {"form": "geometric", "value": 1.0, "rate": 0.5},
             "mu": {"form": "geometric", "value": 0.2, "rate": 0.5}},
            {"scale": 5, "lambda": 0.2,
             "nu": {"form": "constant", "value": 1.0},
             "mu": {"form": "constant", "value": 0.1},
             "decay": {"value": 1.0, "rate": 0.5}},
        ],
    }


def _exm_continuous_config():
    return {
        "system": {
            "kind": "continuous",
            "dimension": 5,
            "linear": {"form": "constant-diagonal", "values": [-1.0, 0.0, 0.0, 0.0, 1.0]},
            "perturbation": [
                {"component": 1, "family": "scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "source": 2},
                {"component": 2, "family": "decayed_scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "decay-rate": 1.0, "source": 3},
                {"component": 3, "family": "zero"},
                {"component": 4, "family": "decayed_scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "decay-rate": 1.0, "source": 5},
                {"component": 5, "family": "scaled_sine", "amplitude": 1.0,
                 "lipschitz": 0.2, "source": 1},
            ],
        },
        "decomposition": {
            "scales": [
                {"label": 1, "class": "stable", "coordinates": [1]},
                {"label": 2, "class": "stable", "coordinates": [2]},
                {"label": 3, "class": "center", "coordinates": [3]},
                {"label": 4, "class": "unstable", "coordinates": [4]},
                {"label": 5, "class": "unstable", "coordinates": [5]},
            ],
        },
        "envelopes": [
            {"scale": 1, "lambda": 0.2,
             "nu": {"form": "constant", "value": 1.0},
             "mu": {"form": "constant", "value": 0.2}},
            {"scale": 2, "lambda": 0.2,
             "nu": {"form": "exponential", "value": 1.0, "rate": 1.0},
             "mu": {"form": "exponential", "value": 0.2, "rate": 1.0}},
            {"scale": 4, "lambda": 0.2,
             "nu": {"form": "exponential", "value": 1.0, "rate": 1.0},
             "mu": {"form": "exponential", "value": 0.2, "rate": 1.0}},
            {"scale": 5, "lambda": 0.2,
             "nu": {"form": "constant", "value": 1.0},
             "mu": {"form": "constant", "value": 0.2},
             "decay": {"value": 1.0, "rate": 1.0}},
        ],
    }


def _scalar_oracle_config():
    return {
        "system": {
            "kind": "discrete",
            "dimension": 1,
            "linear": {"form": "constant-diagonal", "values": [0.5]},
            "perturbation": [
                {"component": 1, "family": "constant", "amplitude": 0.3},
            ],
        },
        "decomposition": {
            "scales": [{"label": 1, "class": "stable", "coordinates": [1]}],
        },
        "envelopes": [
            {"scale": 1, "lambda": 0.005,
             "nu": {"form": "constant", "value": 0.3},
             "mu": {"form": "constant", "value": 0.0}},
        ],
    }


def _identity_null_config():
    return {
        "system": {
            "kind": "discrete",
            "dimension": 1,
            "linear": {"form": "constant-diagonal", "values": [1.0]},
            "perturbation": [{"component": 1, "family": "zero"}],
        },
        "decomposition": {
            "scales": [{"label": 1, "class": "center", "coordinates": [1]}],
        },
        "envelopes": [],
    }


_BUILTINS = {
    "exm-discrete": _exm_discrete_config,
    "exm-continuous": _exm_continuous_config,
    "scalar-oracle": _scalar_oracle_config,
    "identity-null": _identity_null_config,
}


def builtin_scenario(name: str) -> SystemBundle:
    """Return one of the shipped demo scenarios by name.

    Scenarios are defined as embedded configuration documents, so they are
    deterministic and round-trip through :func:`emit_configuration`.
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scenario '{name}' (available: {', '.join(sorted(_BUILTINS))})")
    return load_config_dict(factory(), name=name)


def scenario_names():
    return tuple(sorted(_BUILTINS))
