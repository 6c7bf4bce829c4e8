"""Command-line pipeline: certify, build maps, verify, inspect orbits.

Exit statuses: 0 success/pass, 1 usage or configuration error, 2 verification
failure, 3 certificate failure, 4 numeric failure.  Output files are written
atomically (temp then rename) and are byte-stable for a given configuration
and seed; every failure prints a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile

import numpy as np

from . import cocycle, conjugacy, conjugacy_ct
from .certificate import _fmt, certificate_csv_rows, certificate_report, certify
from .errors import (CenterNotTrivial, CertificateNotPassed, ConfigError,
                     NoDecayDetected, NonContractiveInverse, SingularStepError)
from .system import (SystemBundle, builtin_scenario, emit_configuration,
                     load_configuration, scenario_names)
from .verify import make_sample_spec, verification_csv_rows, verification_report, verification_summary

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_CERT = 3
EXIT_NUMERIC = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the pipeline reserves 2 for verification
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# atomic, byte-stable artifact writing

def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".linconj-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    _write_atomic(path, buf.getvalue())


def _echo_config(bundle: SystemBundle, out: str) -> None:
    _write_atomic(os.path.join(out, "config.yaml"), emit_configuration(bundle))


def _read_points(path: str, dim: int):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expect = ["time"] + [f"x{i + 1}" for i in range(dim)]
    if not rows or [c.strip() for c in rows[0]] != expect:
        raise ConfigError(f"points file must have header {','.join(expect)}")
    data = np.array([[float(c) for c in row] for row in rows[1:] if row])
    if data.size == 0:
        raise ConfigError("points file has no data rows")
    return data[:, 0], data[:, 1:]


# ---------------------------------------------------------------------------
# bundle resolution and solver overrides

def _load_bundle(args) -> SystemBundle:
    named = getattr(args, "scenario", None)
    if named is not None and args.config is not None:
        raise ConfigError("give a builtin scenario name or --config, not both")
    if named is not None:
        if named not in scenario_names():
            raise ConfigError(
                f"unknown scenario {named!r}; builtins: {', '.join(scenario_names())}")
        bundle = builtin_scenario(named)
    elif args.config is not None:
        bundle = load_configuration(args.config)
    else:
        raise ConfigError("a builtin scenario name or --config is required")

    overrides = {}
    for key, attr in (("tol", "tol"), ("horizon", "horizon"),
                      ("step", "ode_step"), ("seed", "seed"),
                      ("samples", "samples")):
        v = getattr(args, key, None)
        if v is not None:
            overrides[attr] = v
    if overrides:
        bundle = bundle.with_solver(**overrides)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        raise ConfigError("--jobs must be a positive integer")
    return bundle


def _prepare_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# subcommands

def _run_certify(bundle: SystemBundle, out: str) -> int:
    cert = certify(bundle)
    _write_atomic(os.path.join(out, "certificate.txt"), certificate_report(cert))
    _write_csv(os.path.join(out, "certificate.csv"), certificate_csv_rows(cert))
    _echo_config(bundle, out)
    if not cert.passed:
        scales = ", ".join(str(k) for k in cert.failing_scales)
        print(f"linconj: certificate failed (scales {scales})", file=sys.stderr)
        return EXIT_CERT
    return EXIT_OK


def cmd_certify(args) -> int:
    return _run_certify(_load_bundle(args), _prepare_out(args))


def cmd_conjugate(args) -> int:
    bundle = _load_bundle(args)
    out = _prepare_out(args)
    if args.points is None:
        raise _UsageError("conjugate requires --points")
    times, states = _read_points(args.points, bundle.dim)
    cert = certify(bundle)
    if not cert.passed:
        raise CertificateNotPassed(
            f"certificate verdict is fail (failing scales: "
            f"{', '.join(str(k) for k in cert.failing_scales)})")

    d = bundle.dim
    if bundle.is_discrete:
        ns = times.astype(int)
        hs = np.stack([r.value for r in
                       conjugacy.eval_h_batch(bundle, cert, ns, states)])
        hbs = np.stack([r.value for r in
                        conjugacy.eval_hbar_batch(bundle, cert, ns, states)])
        taus = np.stack([conjugacy.deviation_tau(bundle, int(n), x)
                         for n, x in zip(ns, states)])
        taubs = np.stack([conjugacy.deviation_tau_bar(bundle, int(n), x)
                          for n, x in zip(ns, states)])
    else:
        hs = np.stack([r.value for r in
                       conjugacy_ct.eval_h_ct_batch(bundle, cert, times, states)])
        hbs = np.stack([r.value for r in
                        conjugacy_ct.eval_hbar_ct_batch(bundle, cert, times, states)])
        taus = np.stack([conjugacy_ct.deviation_ct(bundle, float(t), x)
                         for t, x in zip(times, states)])
        taubs = taus

    header = (["time"] + [f"x{i+1}" for i in range(d)]
              + [f"h{i+1}" for i in range(d)] + [f"H{i+1}" for i in range(d)]
              + [f"hbar{i+1}" for i in range(d)] + [f"Hbar{i+1}" for i in range(d)]
              + [f"tau{i+1}" for i in range(d)] + [f"taubar{i+1}" for i in range(d)])
    rows = [header]
    blocks = [states, hs, states + hs, hbs, states + hbs, taus, taubs]
    for i, t in enumerate(times):
        row = [_fmt(float(t))]
        for block in blocks:
            row += [_fmt(float(v)) for v in block[i]]
        rows.append(row)
    _write_csv(os.path.join(out, "conjugacy.csv"), rows)
    _echo_config(bundle, out)
    return EXIT_OK


def _run_verify(bundle: SystemBundle, out: str) -> int:
    spec = make_sample_spec(bundle)
    report = verification_report(bundle, spec)
    _write_atomic(os.path.join(out, "verification.txt"),
                  verification_summary(report))
    _write_csv(os.path.join(out, "verification.csv"),
               verification_csv_rows(report))
    _echo_config(bundle, out)
    if not report.passed:
        failed = ", ".join(k for k, s in sorted(report.stats.items())
                           if not s.passed)
        print(f"linconj: verification failed ({failed})", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    return _run_verify(_load_bundle(args), _prepare_out(args))


def cmd_orbit(args) -> int:
    bundle = _load_bundle(args)
    out = _prepare_out(args)
    if args.points is None:
        raise _UsageError("orbit requires --points")
    times, states = _read_points(args.points, bundle.dim)
    d = bundle.dim
    rows = [["start_id", "time"] + [f"lin{i+1}" for i in range(d)]
            + [f"non{i+1}" for i in range(d)]]
    for i, (t0, x0) in enumerate(zip(times, states)):
        if bundle.is_discrete:
            n0 = int(t0)
            table = cocycle.orbit_table(bundle, n0, x0, n0,
                                        bundle.solver.horizon,
                                        with_nonlinear=True)
            ts, lin, non = table.times, table.linear, table.nonlinear
        else:
            dt = bundle.solver.sup_step
            count = max(1, int(round((bundle.solver.t_max - t0) / dt)))
            ts = t0 + dt * np.arange(count + 1)
            lin = np.empty((count + 1, d))
            non = np.empty((count + 1, d))
            lin[0] = non[0] = x0
            for j in range(count):
                lin[j + 1] = cocycle.ct_linear_transit(
                    bundle, ts[j + 1], ts[j], lin[j])
                non[j + 1] = cocycle.ct_nonlinear_transit(
                    bundle, ts[j + 1], ts[j], non[j])
        for t, o, z in zip(ts, lin, non):
            rows.append([str(i), _fmt(float(t))]
                        + [_fmt(float(v)) for v in o]
                        + [_fmt(float(v)) for v in z])
    _write_csv(os.path.join(out, "orbit.csv"), rows)
    _echo_config(bundle, out)
    return EXIT_OK


def cmd_demo(args) -> int:
    bundle = _load_bundle(args)
    out = _prepare_out(args)
    status = _run_certify(bundle, out)
    if status != EXIT_OK:
        return status
    return _run_verify(bundle, out)


# ---------------------------------------------------------------------------
# parser and entry point

def _build_parser() -> _Parser:
    p = _Parser(prog="linconj",
                description="Certify multiscale standing assumptions and "
                            "build/verify the conjugacy to the linear system.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False):
        sp.add_argument("scenario", nargs=None if scenario_required else "?",
                        help="builtin scenario name"
                        + ("" if scenario_required else " (or use --config)"))
        if not scenario_required:
            sp.add_argument("--config", help="path to a configuration file")
        else:
            sp.set_defaults(config=None)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--tol", type=float, help="solver tolerance override")
        sp.add_argument("--horizon", type=int, help="discrete horizon override")
        sp.add_argument("--step", type=float, help="integration step override")
        sp.add_argument("--seed", type=int, help="sampling seed override")
        sp.add_argument("--samples", type=int, help="sample count override")
        sp.add_argument("--jobs", type=int,
                        help="worker cap (evaluation is batch-vectorized)")

    sp = sub.add_parser("certify", help="run the standing-assumption certificate")
    common(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("conjugate",
                        help="evaluate the conjugacy maps at points from a file")
    common(sp)
    sp.add_argument("--points", help="CSV of evaluation points (time,x1,...,xd)")
    sp.set_defaults(func=cmd_conjugate)

    sp = sub.add_parser("verify", help="run the residual verification report")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("orbit", help="dump linear and perturbed orbits")
    common(sp)
    sp.add_argument("--points", help="CSV of orbit starts (time,x1,...,xd)")
    sp.set_defaults(func=cmd_orbit)

    sp = sub.add_parser("demo", help="full pipeline on a builtin scenario")
    common(sp, scenario_required=True)
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(f"linconj: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError) as e:
        print(f"linconj: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CertificateNotPassed as e:
        print(f"linconj: {e}", file=sys.stderr)
        return EXIT_CERT
    except (NonContractiveInverse, NoDecayDetected, SingularStepError) as e:
        print(f"linconj: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CenterNotTrivial as e:
        print(f"linconj: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
