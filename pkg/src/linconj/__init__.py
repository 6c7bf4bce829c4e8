"""Certified linearization of nonautonomous multiscale systems.

Certifies the standing summability assumptions of a linear system split into
scale components, builds the conjugacy (and its inverse) between the linear
dynamics and a Lipschitz perturbation of it, and verifies the linearization
identities a posteriori.  Discrete time works on step indices; continuous
time on a fixed-step propagator grid.
"""

from .certificate import Certificate, certificate_report, certify
from .cocycle import (ct_linear_transit, ct_nonlinear_transit, linear_transit,
                      nonlinear_transit, orbit_table)
from .conjugacy import (apply_H, apply_Hbar, deviation_tau, deviation_tau_bar,
                        eval_h, eval_h_batch, eval_hbar, eval_hbar_batch,
                        picard_iteration_count)
from .conjugacy_ct import (apply_H_ct, apply_Hbar_ct, deviation_ct, eval_h_ct,
                           eval_h_ct_batch, eval_hbar_ct, eval_hbar_ct_batch)
from .errors import (CenterNotTrivial, CertificateNotPassed, ConfigError,
                     NoDecayDetected, NonContractiveInverse, SingularStepError)
from .system import (SystemBundle, builtin_scenario, load_config_dict,
                     load_configuration, scenario_names)
from .verify import (SampleSpec, VerificationReport, apriori_bound,
                     make_sample_spec, residual_inverse_pair,
                     residual_quasi_conjugacy, residual_transport,
                     verification_report, verification_summary)

__version__ = "0.1.0"

__all__ = [
    "Certificate", "certify", "certificate_report",
    "ct_linear_transit", "ct_nonlinear_transit", "linear_transit",
    "nonlinear_transit", "orbit_table",
    "apply_H", "apply_Hbar", "deviation_tau", "deviation_tau_bar",
    "eval_h", "eval_h_batch", "eval_hbar", "eval_hbar_batch",
    "picard_iteration_count",
    "apply_H_ct", "apply_Hbar_ct", "deviation_ct", "eval_h_ct",
    "eval_h_ct_batch", "eval_hbar_ct", "eval_hbar_ct_batch",
    "CenterNotTrivial", "CertificateNotPassed", "ConfigError",
    "NoDecayDetected", "NonContractiveInverse", "SingularStepError",
    "SystemBundle", "builtin_scenario", "load_config_dict",
    "load_configuration", "scenario_names",
    "SampleSpec", "VerificationReport", "apriori_bound", "make_sample_spec",
    "residual_inverse_pair", "residual_quasi_conjugacy", "residual_transport",
    "verification_report", "verification_summary",
    "ConjugacyTransformer",
]


def __getattr__(name):
    # deferred: pulls in sklearn only when the estimator facade is requested
    if name == "ConjugacyTransformer":
        from .estimator import ConjugacyTransformer
        return ConjugacyTransformer
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
