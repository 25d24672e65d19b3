"""Command line entry point: rvprd <command> --config <path> --out <dir> [--override-horizon]."""
import argparse
import json
import logging
import os
from pathlib import Path
import sys

COMMANDS = ("solve", "picard", "envelope", "selftest", "sweep")
log = logging.getLogger("rvprd")


def _threads():
    raw = os.environ.get("RVPRD_THREADS")
    if raw is None:
        return None
    try:
        count = int(raw)
    except ValueError:
        raise SystemExit(f"RVPRD_THREADS={raw!r} is not an integer")
    if count < 1:
        raise SystemExit(f"RVPRD_THREADS={count} must be >= 1")
    return count


def _configure_threads():
    # must run before numba is first imported
    count = _threads()
    if count is not None:
        os.environ["NUMBA_NUM_THREADS"] = str(count)
    from . import field_solver, kernels
    if count is not None:
        kernels.set_threads(count)
        field_solver.FFT_WORKERS = count


def _load_config(args):
    from .config import parse_config
    text = Path(args.config).read_text(encoding="utf-8") if args.config else "{}"
    cfg = parse_config(text)
    if args.override_horizon:
        cfg = cfg.replace(override_horizon=True)
    return cfg


def _progress(label):
    def report(k, total):
        log.info("%s %d/%d", label, k, total)
    return report


def solve(cfg, out):
    from .diagnostics import run_checks
    from .dynamics import run
    from .io import emit_outputs
    result = run(cfg, snapshot_dir=out / "snapshots", progress=_progress("step"))
    checks = run_checks(result.records, result.setup.envelope, result.setup.eps_eff)
    emit_outputs(result.records, checks, out)
    return result, checks


def cmd_solve(cfg, out):
    _, checks = solve(cfg, out)
    return checks


def cmd_sweep(cfg, out):
    from .io import MOMENT_COLUMNS, write_checks, write_table
    rows, every = [], []
    for eps in cfg.sweep_epsilons:
        result, checks = solve(cfg.replace(epsilon=eps), out / f"eps_{eps:g}")
        every += checks
        status = "pass" if all(c.status != "fail" for c in checks) else "fail"
        rows.append([eps, *result.records[-1].row(), status])
    write_table(out / "sweep.csv", ("epsilon", *MOMENT_COLUMNS, "checks"), rows)
    write_checks(every, out / "checks.ndjson")
    return every


def cmd_picard(cfg, out):
    from .diagnostics import CheckResult, convergence_report
    from .dynamics import PicardDivergenceError, picard_floor, picard_solve
    from .io import write_checks, write_picard
    try:
        report = picard_solve(cfg, progress=_progress("iteration"))
        diverged = False
    except PicardDivergenceError as exc:
        log.error("%s", exc)
        report, diverged = exc.report, True
    write_picard(report, out / "picard.csv")
    checks = [CheckResult("picard_divergence", "fail" if diverged else "pass", report.alpha[-1])]
    if len(report.alpha) >= 4:
        s = convergence_report(report)
        ok = s.exact or not s.super_envelope
        checks.append(CheckResult("picard_envelope", "pass" if ok else "fail", report.alpha[-1],
                                  detail={"fitted_C3T": s.fitted_C3T, "floor": picard_floor(report)}))
    write_checks(checks, out / "checks.ndjson")
    return checks


def cmd_envelope(cfg, out):
    import math
    from .diagnostics import CheckResult
    from .envelope import envelope_for_datum, ode_blowup_time
    from .io import write_checks, write_envelope
    env = envelope_for_datum(cfg.datum.build())
    if cfg.T is not None:
        T = min(cfg.T, env.a) if math.isfinite(env.a) else cfg.T
    else:
        T = 0.99 * env.a if math.isfinite(env.a) else 1.0
    write_envelope(env, T, out / "envelope.csv")
    checks = []
    if math.isfinite(env.a):
        a_ode = ode_blowup_time(env)
        rel = abs(a_ode - env.a) / env.a
        checks.append(CheckResult("blowup_time", "pass" if rel <= 1e-6 else "fail", rel))
    write_checks(checks, out / "checks.ndjson")
    return checks


def cmd_selftest(cfg, out):
    from .acceptance import run_all
    from .io import write_checks
    results = run_all(progress=lambda line: print(line, flush=True))
    write_checks(results, out / "checks.ndjson")
    return results


def build_parser():
    p = argparse.ArgumentParser(prog="rvprd", description="Particle solver and verification harness "
                                "for the reduced Vlasov-Poisson system with radiation damping.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--override-horizon", action="store_true",
                   help="allow T at or beyond the envelope blow-up time")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    _configure_threads()
    from .config import ConfigError
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        handler = {"solve": cmd_solve, "picard": cmd_picard, "envelope": cmd_envelope,
                   "selftest": cmd_selftest, "sweep": cmd_sweep}[args.command]
        checks = handler(cfg, out)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"rvprd {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    failed = [c.check for c in checks if c.status == "fail"]
    summary = {"command": args.command, "checks": len(checks), "failed": failed}
    print(json.dumps(summary))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
