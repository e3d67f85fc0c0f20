"""Command-line front end: ``darklab analyze|synthesize|simulate|verify|example``.

Exit codes: analyze returns 0/1/2 for exists/none/inconclusive; verify and
synthesize return 0 when every residual is within tolerance and 1 otherwise.
Errors map to their ``exit_code`` (64 malformed input, 65 inconsistent
dimensions, 66 malformed certificate, 3 insufficient dark capacity,
4 method/kernel mismatch, 70 anything unexpected).
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from darklab.core import benchmark
from darklab.core.analysis import (
    Verdict,
    detect_dark_modes,
    forbidden_coupling_report,
    verify_certificate,
    witness_residuals,
)
from darklab.core.simulator import (
    METHODS,
    DriveSignal,
    SinusoidDrive,
    ZeroDrive,
    dark_decoupling_test,
    simulate_mean,
)
from darklab.core.synthesis import compute_h_d, synthesize_omega, verify_synthesis
from darklab.core.system import SystemSpec
from darklab.errors import CertificateFormatError, ConfigurationError, DarklabError, DimensionMismatch, UsageError
from darklab.services.environment import get_settings
from darklab.services.store import SpecStore

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
VERDICT_EXIT = {"exists": 0, "none": 1, "inconclusive": 2}
EXAMPLES = ("section5", "three-mode")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from e
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return value


# ==================== PARSING HELPERS ====================


def parse_drive(text: str) -> DriveSignal:
    """``zero``, ``sin:amp=A,freq=F,phase=P,channels=0;2`` or ``table:PATH``."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower()
    if kind == "zero" and not rest:
        return ZeroDrive()
    if kind == "table" and rest:
        return SpecStore.load_drive_table(rest)
    if kind == "sin":
        fields = {}
        for item in filter(None, rest.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"drive field {item!r} is not key=value")
            fields[key.strip().lower()] = value.strip()
        unknown = set(fields) - {"amp", "freq", "phase", "channels"}
        if unknown:
            raise UsageError(f"unknown sinusoid drive fields: {', '.join(sorted(unknown))}")
        try:
            channels = None
            if fields.get("channels"):
                channels = tuple(int(c) for c in fields["channels"].split(";"))
            return SinusoidDrive(
                amplitude=float(fields.get("amp", 1.0)),
                frequency=float(fields.get("freq", 1.0)),
                phase=float(fields.get("phase", 0.0)),
                channels=channels,
            )
        except ValueError as e:
            raise UsageError(f"bad sinusoid drive {text!r}: {e}") from e
    raise UsageError(f"unrecognised drive {text!r}; use zero, sin:... or table:PATH")


def parse_vector(text: str | None, size: int) -> np.ndarray:
    """Comma-separated reals; None gives the zero vector."""
    if text is None:
        return np.zeros(size)
    try:
        values = np.array([float(item) for item in text.split(",")])
    except ValueError as e:
        raise UsageError(f"x0 must be comma-separated numbers, got {text!r}") from e
    if values.size != size:
        raise DimensionMismatch(f"x0 must have {size} entries, got {values.size}")
    return values


def print_residuals(residuals: dict, tol: float) -> bool:
    """Residual table on stdout; True when every entry is within ``tol``."""
    ok = True
    for name, value in residuals.items():
        passed = value <= tol
        ok = ok and passed
        print(f"{name:<20} {value:.17g}  {'ok' if passed else 'FAIL'}")
    print(f"{'tol':<20} {tol:.17g}")
    return ok


def analysis_report(spec: SystemSpec, verdict: Verdict, tol: float, elapsed: float | None = None) -> dict:
    h_d = compute_h_d(spec.v)
    diagnostics = verdict.diagnostics
    cert = verdict.certificate
    report = {
        "verdict": verdict.kind,
        "reason": verdict.reason,
        "tol": tol,
        "dimensions": {
            "n": spec.n,
            "M": spec.m,
            "dim_ker_vjn": diagnostics["dim_kernel"],
            "dim_u": diagnostics["dim_u"],
            "dim_radical": diagnostics["dim_radical"],
            "dim_h_d": h_d.dim,
            "dark_capacity": h_d.dim // 2,
        },
        "diagnostics": dict(diagnostics),
        "residuals": dict(cert.residuals) if cert is not None else None,
        "certificate": SpecStore.certificate_to_dict(cert) if cert is not None else None,
        "forbidden_coupling": forbidden_coupling_report(spec, cert),
    }
    if elapsed is not None:
        report["timing"] = {"elapsed_s": elapsed}
    return report


def _resolve_tol(explicit: float | None, spec: SystemSpec | None = None) -> float:
    if explicit is not None:
        return explicit
    if spec is not None and spec.tol is not None:
        return spec.tol
    return get_settings().tol


# ==================== COMMANDS ====================


def cmd_analyze(args: argparse.Namespace) -> int:
    spec = SpecStore.load_system(args.system)
    tol = _resolve_tol(args.tol, spec)
    started = time.perf_counter()
    verdict = detect_dark_modes(spec, tol=tol)
    elapsed = time.perf_counter() - started
    logger.info("verdict %s after %.3f s", verdict.kind, elapsed)
    report = analysis_report(spec, verdict, tol, elapsed if args.timing else None)
    if args.out:
        SpecStore.save_json(report, args.out)
        print(f"verdict: {verdict.kind}" + (f" ({verdict.reason})" if verdict.reason else ""))
        if verdict.certificate is not None:
            print_residuals(verdict.certificate.residuals, tol)
    else:
        print(json.dumps(SpecStore.jsonable(report), indent=2))
    return VERDICT_EXIT[verdict.kind]


def cmd_synthesize(args: argparse.Namespace) -> int:
    v, kernels = SpecStore.load_coupling(args.coupling)
    target = SpecStore.load_target(args.target)
    result = synthesize_omega(v, kernels, target, tol=args.tol)
    residuals = verify_synthesis(result, v, kernels)
    out = Path(args.out)
    SpecStore.save_system(result.system(v, kernels), out / "system.json")
    SpecStore.save_certificate(result.certificate, out / "certificate.json")
    print(f"dim H_D = {result.h_d_dim}; dark mode with {2 * result.target.k} operators")
    return 0 if print_residuals(residuals, result.certificate.tol) else 1


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = SpecStore.load_system(args.system)
    x0 = parse_vector(args.x0, spec.size)
    drive = parse_drive(args.drive)
    trajectory = simulate_mean(spec, x0, drive, args.t_final, args.dt, args.method)
    SpecStore.save_trajectory(trajectory, args.out)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    spec = SpecStore.load_system(args.system)
    cert = SpecStore.load_certificate(args.certificate)
    tol = args.tol if args.tol is not None else cert.tol
    try:
        residuals = {**verify_certificate(spec, cert), **witness_residuals(spec, cert)}
    except DimensionMismatch as e:
        raise CertificateFormatError(f"certificate does not fit the system: {e}") from e
    return 0 if print_residuals(residuals, tol) else 1


def cmd_example(args: argparse.Namespace) -> int:
    """Run the three-mode benchmark end to end and write every artifact."""
    m, omega, out = args.m, args.omega, Path(args.out)
    kernels = list(benchmark.kernels())
    target = benchmark.target(m, omega)
    result = benchmark.synthesize(m, omega)
    spec = SystemSpec.from_coupling_vectors(result.omega, benchmark.coupling_vectors(), kernels)

    coupling = SpecStore.system_to_dict(spec)
    del coupling["omega"]
    SpecStore.save_json(coupling, out / "coupling.json")
    SpecStore.save_json({"omega_dark": target.omega_dark}, out / "target.json")
    SpecStore.save_system(spec, out / "system.json")
    SpecStore.save_certificate(result.certificate, out / "certificate.json")

    tol = _resolve_tol(args.tol)
    verdict = detect_dark_modes(spec, tol=tol)
    SpecStore.save_json(analysis_report(spec, verdict, tol), out / "analysis.json")

    x0 = result.s_d.T @ np.array([1.0, 0.0])
    trajectory = simulate_mean(spec, x0, ZeroDrive(), args.t_final, args.dt, "ExpEmbed")
    SpecStore.save_trajectory(trajectory, out / "trajectory.csv")
    decoupling = dark_decoupling_test(
        spec, result.certificate, SinusoidDrive(amplitude=10.0, frequency=1.0), args.t_final, args.dt
    )
    SpecStore.save_json(dict(decoupling), out / "decoupling.json")

    comparison = benchmark.compare_with_closed_form(m, omega, result)
    SpecStore.save_json({"m": m, "omega": omega, "rows": comparison}, out / "comparison.json")

    print(f"verdict: {verdict.kind}")
    certified = print_residuals(verify_synthesis(result, benchmark.coupling_matrix(), kernels), result.certificate.tol)
    for name, value in decoupling.items():
        print(f"{name:<20} {value:.17g}")
    print(f"{'quantity':<20} {'max_abs_dev':<24} tol")
    for row in comparison:
        print(f"{row['quantity']:<20} {row['max_abs_dev']:<24.17g} {row['tol']:.0e}  {'ok' if row['passed'] else 'FAIL'}")
    matched = all(row["passed"] for row in comparison)
    return 0 if certified and matched and verdict.kind == "exists" else 1


# ==================== ENTRY POINT ====================


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="darklab", description="Dark modes of non-Markovian linear quantum systems.")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", help="decide whether a system has dark modes")
    analyze.add_argument("--system", required=True, help="system spec JSON")
    analyze.add_argument("--tol", type=_positive, help="certificate tolerance (default DARKLAB_TOL)")
    analyze.add_argument("--out", help="write the report here instead of stdout")
    analyze.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    analyze.set_defaults(handler=cmd_analyze)

    synthesize = commands.add_parser("synthesize", help="engineer Omega implanting a dark mode")
    synthesize.add_argument("--coupling", required=True, help="system JSON providing V and kernels")
    synthesize.add_argument("--target", required=True, help="target JSON with omega_dark")
    synthesize.add_argument("--out", required=True, help="output directory")
    synthesize.add_argument("--tol", type=_positive)
    synthesize.set_defaults(handler=cmd_synthesize)

    simulate = commands.add_parser("simulate", help="integrate the mean dynamics")
    simulate.add_argument("--system", required=True)
    simulate.add_argument("--x0", help="initial mean, comma separated (default 0)")
    simulate.add_argument("--drive", default="zero", help="zero | sin:amp=,freq=,phase=,channels= | table:PATH")
    simulate.add_argument("--t-final", type=_positive, required=True)
    simulate.add_argument("--dt", type=_positive, required=True)
    simulate.add_argument("--method", choices=METHODS, default="ExpEmbed")
    simulate.add_argument("--out", required=True, help="trajectory CSV")
    simulate.set_defaults(handler=cmd_simulate)

    verify = commands.add_parser("verify", help="recompute the residuals of a certificate")
    verify.add_argument("--system", required=True)
    verify.add_argument("--certificate", required=True)
    verify.add_argument("--tol", type=_positive)
    verify.set_defaults(handler=cmd_verify)

    example = commands.add_parser("example", help="reproduce the three-mode benchmark")
    example.add_argument("name", choices=EXAMPLES)
    example.add_argument("--m", type=_positive, default=1.0)
    example.add_argument("--omega", type=_positive, default=2.0)
    example.add_argument("--t-final", type=_positive, default=10.0)
    example.add_argument("--dt", type=_positive, default=1e-3)
    example.add_argument("--tol", type=_positive)
    example.add_argument("--out", required=True, help="output directory")
    example.set_defaults(handler=cmd_example)
    return parser


def _configure_logging() -> None:
    level = get_settings().log_level
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigurationError(f"DARKLAB_LOG_LEVEL={level!r} is not a logging level")
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except DarklabError as e:
        logger.error("%s", e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 70


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
