"""Estimator-style facade over certification and the conjugacy maps.

Thin adapter for pipelines that expect the fit/transform idiom: ``fit``
certifies a scenario, ``transform`` pushes ``(time, state)`` rows through the
linear-to-perturbed conjugacy, ``inverse_transform`` through its inverse.
All numerics live in the core modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import conjugacy, conjugacy_ct
from .certificate import certify
from .conjugacy import _require_passed
from .system import (SystemBundle, builtin_scenario, load_config_dict,
                     load_configuration, scenario_names)


def _resolve_bundle(scenario) -> SystemBundle:
    if isinstance(scenario, SystemBundle):
        return scenario
    if isinstance(scenario, dict):
        return load_config_dict(scenario)
    if isinstance(scenario, str):
        if scenario in scenario_names():
            return builtin_scenario(scenario)
        return load_configuration(scenario)
    raise TypeError(f"scenario must be a name, path, mapping, or bundle, "
                    f"got {type(scenario).__name__}")


class ConjugacyTransformer(BaseEstimator, TransformerMixin):
    """Conjugacy between a certified linear system and its perturbation.

    Parameters
    ----------
    scenario : str, mapping, or SystemBundle, default "exm-discrete"
        Builtin scenario name, path to a configuration file, configuration
        mapping, or an already-built bundle.
    tol, horizon, step, seed : optional solver overrides applied at fit time.

    Attributes
    ----------
    bundle_ : the certified system bundle.
    certificate_ : the standing-assumption certificate (always passed).
    n_features_in_ : expected row width, ``1 + dim`` for ``(time, x1..xd)``.
    """

    def __init__(self, scenario="exm-discrete", tol=None, horizon=None,
                 step=None, seed=None):
        self.scenario = scenario
        self.tol = tol
        self.horizon = horizon
        self.step = step
        self.seed = seed

    def fit(self, X=None, y=None):
        """Certify the scenario; ``X`` and ``y`` are ignored."""
        bundle = _resolve_bundle(self.scenario)
        overrides = {k: v for k, v in (("tol", self.tol),
                                       ("horizon", self.horizon),
                                       ("ode_step", self.step),
                                       ("seed", self.seed)) if v is not None}
        if overrides:
            bundle = bundle.with_solver(**overrides)
        cert = certify(bundle)
        _require_passed(cert)
        self.bundle_ = bundle
        self.certificate_ = cert
        self.n_features_in_ = bundle.dim + 1
        return self

    def _rows(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected rows (time, x1..x{self.bundle_.dim}), "
                f"got shape {X.shape}")
        return X[:, 0], X[:, 1:]

    def _apply(self, X, forward: bool):
        check_is_fitted(self)
        times, states = self._rows(X)
        b, c = self.bundle_, self.certificate_
        if b.is_discrete:
            ev = (conjugacy.eval_h_batch if forward else
                  conjugacy.eval_hbar_batch)(b, c, times.astype(int), states)
        else:
            ev = (conjugacy_ct.eval_h_ct_batch if forward else
                  conjugacy_ct.eval_hbar_ct_batch)(b, c, times, states)
        out = states + np.stack([r.value for r in ev])
        return np.column_stack([times, out])

    def transform(self, X):
        """Map ``(time, x)`` rows through the forward conjugacy."""
        return self._apply(X, forward=True)

    def inverse_transform(self, X):
        """Map ``(time, y)`` rows through the inverse conjugacy."""
        return self._apply(X, forward=False)
