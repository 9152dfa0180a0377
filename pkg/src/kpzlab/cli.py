"""Command-line front end: declarative runs that leave an audit trail.

Every subcommand writes its data files plus exactly one manifest.json
into --out.  The manifest records the parameters, the seeds, sha256
digests of the outputs, and any pass/fail checks the run performed;
`kpzlab report` replays the recorded verdicts from the manifest alone.
All randomness descends from --seed, so rerunning a command with the
same flags reproduces the data files byte for byte (the manifest
differs only in its wall-clock entry).

Exit codes: 0 success, 1 a run completed but a recorded check failed
(or the field solver aborted), 2 usage errors and refusals (missing or
invalid config, malformed specs, over-budget plans).
"""

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:      # 3.10
    import tomli as tomllib

from .ensembles import canonical_moment_bounds, spectral_gap, write_residual_table
from .harness import (ExperimentPlan, bg2_sweep, compare_particle_vs_she,
                      resolve_budget, resolve_rates, run_plan)
from .lattice import WindowFunction, grand_canonical_mean
from .manifest import load_manifest, write_manifest
from .she import SheCoefficients, SheField, run_she, step_mild, write_she_csv

FLOAT_FMT = "%.17g"

# refusal ceiling for the exact canonical sums, in units of k * 2^width
# table entries per requested moment order
SUM_BUDGET_DEFAULT = 1.0e8


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args, command: str) -> Path:
    if args.out is None:
        raise ValueError(f"the {command} command needs --out <dir>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"config {path} is not valid TOML: {exc}")


def _no_config(args, command: str) -> None:
    if args.config is not None:
        raise ValueError(
            f"the {command} command takes flags, not a config file; "
            "--config is read by simulate and bg2")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"expected a comma-separated list of numbers, got {text!r}")


def _ints(text: str) -> tuple:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def parse_fspec(spec: str, rho: float):
    """Window observable from a preset name or inline JSON.

    monomial:l        product eta(1)...eta(l)
    wasep-drift       the two-site drift of the coupling-1 model,
                      recentered at rho
    {...} / *.json    explicit {"window": [lo, hi], "table": [...]}
    """
    spec = spec.strip()
    if spec.startswith("{"):
        try:
            return WindowFunction.from_json(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad window-function JSON {spec!r}: {exc}")
    if spec.endswith(".json"):
        path = Path(spec)
        if not path.exists():
            raise ValueError(f"window-function file not found: {path}")
        return WindowFunction.from_json(path.read_text())
    if spec.startswith("monomial:"):
        try:
            l = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad monomial spec {spec!r}: expected monomial:<l>")
        if l < 1:
            raise ValueError(f"monomial length must be >= 1, got {l}")
        f = WindowFunction.site(1)
        for j in range(2, l + 1):
            f = f * WindowFunction.site(j)
        return f
    if spec == "wasep-drift":
        return _recenter(resolve_rates("wasep").drift_function(), rho)
    raise ValueError(
        f"unknown f spec {spec!r}: use monomial:<l>, wasep-drift, or a JSON "
        'window function {"window": [lo, hi], "table": [...]}')


def _recenter(f: WindowFunction, rho: float) -> WindowFunction:
    psi0 = grand_canonical_mean(f, rho)
    psi1 = grand_canonical_mean(f, rho, deriv=1)
    return f - psi0 - (WindowFunction.site(f.lo) - rho) * psi1


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    out = _out_dir(args, "simulate")
    if args.config is None:
        raise ValueError("simulate needs --config <plan.toml>")
    cfg = _load_config(args.config)
    plan = ExperimentPlan.from_dict(cfg)
    if args.seed is not None:
        plan = ExperimentPlan.from_dict({**plan.to_dict(), "master_seed": args.seed})
    budget = resolve_budget(args.budget_events)
    t0 = time.monotonic()
    result = run_plan(plan, budget=budget, jobs=args.jobs)
    rows = []
    for gi, (n, g_spec) in enumerate(plan.grid_points()):
        rep = result.reports[f"n={n},G={g_spec}"]
        for j, name in enumerate(rep.names):
            rows.append([n, g_spec, name, rep.mean[j], rep.var[j],
                         rep.ci_half[j], rep.nreps])
    moments = _write_csv(out / "moments.csv",
                         ["n", "g_spec", "observable", "mean", "var",
                          "ci_half", "replicas"], rows)
    report = _write_json(out / "plan_report.json", result.to_dict())
    seeds = [gi * plan.replicas + r
             for gi in range(len(plan.grid_points()))
             for r in range(plan.replicas)]
    write_manifest(out, "simulate", plan.to_dict(), plan.master_seed, seeds,
                   time.monotonic() - t0, [int(result.events_total)],
                   inputs=[args.config], outputs=[moments, report])
    return 0


def cmd_ensembles(args) -> int:
    out = _out_dir(args, "ensembles")
    _no_config(args, "ensembles")
    f = parse_fspec(args.f, args.rho)
    ks = _parse_krange(args.k_range)
    p = args.p
    cost = (1 + (p or 0)) * sum(k * (1 << f.width) for k in ks)
    budget = resolve_budget(args.budget_events)
    cap = budget if budget is not None else SUM_BUDGET_DEFAULT
    if cost > cap:
        kmax = int(math.sqrt(2.0 * cap / ((1 + (p or 0)) * (1 << f.width))))
        raise ValueError(
            f"exact canonical sums for k up to {max(ks)} cost about "
            f"{cost:.3g} units, over the budget {cap:.3g}; try a smaller "
            f"range (k <= {kmax}) or raise --budget-events/KPZLAB_BUDGET")
    t0 = time.monotonic()
    residuals = write_residual_table(out / "residuals.csv", f, ks, rho=args.rho)
    outputs = [residuals, residuals.with_suffix(".sidecar.json")]
    if p is not None:
        fc = _recenter(f, args.rho)
        rows = []
        for k in ks:
            mb = canonical_moment_bounds(fc, args.rho, k, p=p)
            rows.append([k, p, mb.moment2p, mb.moment2p_scaled,
                         mb.residual_moment2, mb.residual_moment2_scaled])
        outputs.append(_write_csv(out / "moments.csv",
                                  ["k", "p", "moment2p", "k2p_scaled",
                                   "residual_moment2", "k3_scaled"], rows))
    write_manifest(out, "ensembles",
                   {"f": args.f, "rho": args.rho, "k_range": args.k_range,
                    "p": p, "cost_units": cost},
                   args.seed or 0, [], time.monotonic() - t0, [],
                   outputs=outputs)
    return 0


def _parse_krange(text: str):
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"bad k range {text!r}: expected lo:hi[:step]")
    try:
        lo, hi = int(parts[0]), int(parts[1])
        step = int(parts[2]) if len(parts) == 3 else 1
    except ValueError:
        raise ValueError(f"bad k range {text!r}: expected lo:hi[:step]")
    if lo < 1 or hi < lo or step < 1:
        raise ValueError(f"bad k range {text!r}: need 1 <= lo <= hi, step >= 1")
    return list(range(lo, hi + 1, step))


def cmd_gap(args) -> int:
    out = _out_dir(args, "gap")
    _no_config(args, "gap")
    model = resolve_rates(args.preset)
    t0 = time.monotonic()
    g = spectral_gap(model, args.k, args.m)
    print(f"gap {g!r}")
    table = _write_csv(out / "gap.csv", ["k", "m", "gap", "k2_gap"],
                       [[args.k, args.m, g, args.k ** 2 * g]])
    write_manifest(out, "gap",
                   {"preset": args.preset, "k": args.k, "m": args.m},
                   args.seed or 0, [], time.monotonic() - t0, [],
                   outputs=[table])
    return 0


def _heat_check(M: int, dx: float, dt: float, D: float, rho: float, steps: int = 8):
    # zero-noise twin through the public stepper: after `steps` steps every
    # Fourier mode must sit on the analytic semigroup exp(-D q^2 t / 2)
    x = dx * np.arange(M)
    L = M * dx
    Z0 = 1.0 + 0.5 * np.cos(2.0 * np.pi * x / L) + 0.25 * np.sin(4.0 * np.pi * x / L)
    co = SheCoefficients(D=D, lam=0.0, rho=rho, a=0.0)
    field = SheField(Z=Z0.copy(), dx=dx, t=0.0, coeffs=co)
    rng = np.random.default_rng(0)
    for _ in range(steps):
        field = step_mild(field, dt, rng)
    q = 2.0 * np.pi * np.fft.rfftfreq(M, d=dx)
    exact = np.fft.rfft(Z0) * np.exp(-0.5 * D * q * q * (steps * dt))
    err = float(np.abs(np.fft.rfft(field.Z) - exact).max() / np.abs(exact).max())
    return err < 1.0e-10, err


def cmd_she(args) -> int:
    out = _out_dir(args, "she")
    _no_config(args, "she")
    model = resolve_rates(args.preset, a=args.a, theta=args.theta)
    co = SheCoefficients.from_model(model, args.rho)
    M = args.M
    dx = args.length / M
    dt = args.dt if args.dt is not None else dx / (64.0 * max(co.lam ** 2, 1.0))
    times = _floats(args.times)
    if not times:
        raise ValueError("need at least one sample time")
    dt = times[0] / max(1, round(times[0] / dt))    # snap so times are multiples
    seed = args.seed or 0
    t0 = time.monotonic()
    series = run_she(model, args.rho, M, dx, dt, times, seed)
    table = out / "she.csv"
    write_she_csv(table, series)
    ok, err = _heat_check(M, dx, dt, co.D, args.rho)
    checks = [{"name": "heat-semigroup-mode-decay", "passed": bool(ok),
               "detail": f"max relative mode error {err:.3e} (gate 1e-10) "
                         f"after 8 zero-noise steps"}]
    write_manifest(out, "she",
                   {"preset": args.preset, "a": args.a, "rho": args.rho,
                    "theta": args.theta, "M": M, "length": args.length,
                    "dx": dx, "dt": dt, "times": list(times),
                    "D": co.D, "lam": co.lam},
                   seed, [seed], time.monotonic() - t0, [],
                   outputs=[table], checks=checks)
    return 0 if ok else 1


def cmd_bg2(args) -> int:
    out = _out_dir(args, "bg2")
    if args.config is not None:
        plan = ExperimentPlan.from_dict(_load_config(args.config))
    else:
        plan = ExperimentPlan(preset=args.preset, a=args.a, rho=args.rho,
                              ell=args.ell, n_grid=_ints(args.n_grid),
                              T=args.T, replicas=args.replicas,
                              g_specs=(args.g,), eps_grid=_floats(args.eps_grid))
    if args.seed is not None:
        plan = ExperimentPlan.from_dict({**plan.to_dict(), "master_seed": args.seed})
    budget = resolve_budget(args.budget_events)
    t0 = time.monotonic()
    rep = bg2_sweep(plan, budget=budget)
    rows = [[r["n"], r["eps"], r["msq"], r["ci"], r["skipped"], r["note"]]
            for r in rep.rows]
    table = _write_csv(out / "bg2.csv",
                       ["n", "eps", "msq", "ci", "skipped", "note"], rows)
    fit = _write_json(out / "bg2_fit.json",
                      {"coeffs": list(rep.coeffs), "r2": rep.r2,
                       "monotone_in_eps": {str(k): bool(v) for k, v in
                                           rep.monotone_in_eps.items()},
                       "n_stable": {str(k): bool(v) for k, v in
                                    rep.n_stable.items()}})
    mono = all(rep.monotone_in_eps.values()) if rep.monotone_in_eps else True
    checks = [{"name": "bg2-monotone-eps",
               "passed": bool(mono),
               "detail": "residual decreasing within CI slack on the "
                         "eps >= n^(-1/3) branch, per n: "
                         + json.dumps({str(k): bool(v) for k, v in
                                       sorted(rep.monotone_in_eps.items())})}]
    nskip = sum(1 for r in rep.rows if r["skipped"])
    write_manifest(out, "bg2", plan.to_dict(), plan.master_seed, [],
                   time.monotonic() - t0, [],
                   outputs=[table, fit], checks=checks)
    if nskip:
        print(f"skipped {nskip} grid points below the block floor; see bg2.csv")
    return 0 if mono else 1


def cmd_compare(args) -> int:
    out = _out_dir(args, "compare")
    _no_config(args, "compare")
    model = resolve_rates(args.preset, a=args.a, theta=args.theta)
    budget = resolve_budget(args.budget_events)
    t_list = _floats(args.times)
    seed = args.seed or 0
    t0 = time.monotonic()
    rep = compare_particle_vs_she(model, args.rho, args.n, args.ell,
                                  args.replicas, t_list=t_list,
                                  master_seed=seed, M=args.M,
                                  she_replicas=args.she_replicas,
                                  eps=args.eps, budget=budget)
    outputs = []
    if rep.var_she is None:
        # symmetric model: the one recorded gate is the stationary
        # closed form Var[Y(G)] = chi <G, G>; heights have no field twin
        gate, name = 0.10, "ou-closed-form-within-10pct"
        rows = [[t, rep.var_particle[i], rep.ci_particle[i]]
                for i, t in enumerate(rep.t_list)]
        outputs.append(_write_csv(out / "compare.csv",
                                  ["t", "var_particle", "ci_particle"], rows))
        detail = (f"stationary additive-noise reference Var[Y(G)] = "
                  f"{rep.ou_reference:.6g}")
    else:
        gate, name = 0.15, "cross-validation-within-15pct"
        rows = [[t, rep.var_particle[i], rep.ci_particle[i],
                 rep.var_she[i], rep.ci_she[i], rep.rel_discrepancy[i]]
                for i, t in enumerate(rep.t_list)]
        outputs.append(_write_csv(out / "compare.csv",
                                  ["t", "var_particle", "ci_particle",
                                   "var_she", "ci_she", "rel_discrepancy"],
                                  rows))
        tp = [[t, rep.twopoint_r[s], rep.twopoint_particle[i, s],
               rep.twopoint_she[i, s]]
              for i, t in enumerate(rep.t_list)
              for s in range(rep.twopoint_r.size)]
        outputs.append(_write_csv(out / "twopoint.csv",
                                  ["t", "r", "twopoint_particle",
                                   "twopoint_she"], tp))
        detail = ("calibration gate: no exact reference value exists, the two "
                  "discretizations must agree on Var[theta_t(0)]")
    ok = bool(np.all(rep.rel_discrepancy < gate))
    checks = [{"name": name, "passed": ok,
               "detail": detail + "; rel = "
               + ", ".join(f"{r:.4f}" for r in rep.rel_discrepancy)}]
    write_manifest(out, "compare",
                   {"preset": args.preset, "a": args.a, "rho": args.rho,
                    "theta": args.theta, "n": args.n, "ell": args.ell,
                    "replicas": args.replicas, "she_replicas": args.she_replicas,
                    "M": args.M, "eps": args.eps, "times": list(t_list)},
                   seed, [seed], time.monotonic() - t0, [],
                   outputs=outputs, checks=checks)
    return 0 if ok else 1


def cmd_report(args) -> int:
    if args.out is None:
        raise ValueError("the report command needs --out <dir> to read")
    man = load_manifest(args.out)
    checks = man.get("checks", [])
    print(f"command {man['command']}, seed {man['master_seed']}, "
          f"{len(man.get('outputs', []))} output file(s)")
    failed = 0
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        failed += 0 if c["passed"] else 1
        detail = c.get("detail", "")
        print(f"{status} {c['name']}" + (f": {detail}" if detail else ""))
    if not checks:
        print("no recorded checks")
    else:
        print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser

def _global_flags(parser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="TOML experiment plan "
                        "(read by simulate and bg2)")
    parser.add_argument("--out", default=d, help="output directory; gets the "
                        "data files and one manifest.json")
    parser.add_argument("--seed", type=int, default=d,
                        help="master seed; fully determines all randomness")
    parser.add_argument("--jobs", type=int,
                        default=argparse.SUPPRESS if suppress else 1,
                        help="worker count for replica runs (results do not "
                        "depend on it)")
    parser.add_argument("--budget-events", type=float, dest="budget_events",
                        default=d, help="refuse plans whose cost estimate "
                        "exceeds this; KPZLAB_BUDGET overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpzlab",
        description="speed-change exclusion processes: exact simulation, "
                    "canonical-ensemble calculus, and the KPZ crossover checks")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    add("simulate", cmd_simulate,
        "run the experiment plan in --config and tabulate replica moments")

    sp = add("ensembles", cmd_ensembles,
             "exact canonical expectations, expansion residuals, moment bounds")
    sp.add_argument("--f", default="monomial:3",
                    help="observable: monomial:<l>, wasep-drift, or JSON")
    sp.add_argument("--k-range", dest="k_range", default="4:512",
                    help="sector sizes lo:hi[:step]")
    sp.add_argument("--rho", type=float, default=0.5)
    sp.add_argument("--p", type=int, default=None,
                    help="also tabulate order-2p centered moment bounds")

    sp = add("gap", cmd_gap, "spectral gap of one boxed sector")
    sp.add_argument("--k", type=int, required=True, help="box size")
    sp.add_argument("--m", type=int, required=True, help="particle number")
    sp.add_argument("--preset", default="wasep")

    sp = add("she", cmd_she,
             "multiplicative-noise heat field with the Cole-Hopf height")
    sp.add_argument("--M", type=int, default=256, help="grid cells")
    sp.add_argument("--length", type=float, default=4.0,
                    help="periodic domain length")
    sp.add_argument("--dt", type=float, default=None,
                    help="time step (default keeps dt well under dx)")
    sp.add_argument("--times", default="0.25,0.5",
                    help="comma-separated sample times")
    sp.add_argument("--preset", default="wasep")
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=0.5)
    sp.add_argument("--theta", type=float, default=0.5)

    sp = add("bg2", cmd_bg2,
             "quadratic-replacement residual over an (eps, n) grid")
    sp.add_argument("--n-grid", dest="n_grid", default="32,64")
    sp.add_argument("--eps-grid", dest="eps_grid", default="0.25,0.125,0.0625")
    sp.add_argument("--T", type=float, default=0.25)
    sp.add_argument("--replicas", type=int, default=40)
    sp.add_argument("--g", default="sine", help="test function spec")
    sp.add_argument("--ell", type=int, default=2)
    sp.add_argument("--preset", default="wasep")
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=0.5)

    sp = add("compare", cmd_compare,
             "particle-height variance against the Cole-Hopf field")
    sp.add_argument("--n", type=int, default=32)
    sp.add_argument("--ell", type=int, default=4)
    sp.add_argument("--replicas", type=int, default=100)
    sp.add_argument("--she-replicas", dest="she_replicas", type=int, default=800)
    sp.add_argument("--M", type=int, default=64, help="field grid cells")
    sp.add_argument("--eps", type=float, default=0.125,
                    help="smoothing scale of theta")
    sp.add_argument("--times", default="0.25,0.5")
    sp.add_argument("--preset", default="wasep")
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=0.5)
    sp.add_argument("--theta", type=float, default=0.5)

    add("report", cmd_report,
        "replay the pass/fail checks recorded in a manifest")
    return parser


def main(argv=None) -> int:
    import jsonschema

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError,
            jsonschema.exceptions.ValidationError) as exc:
        print(f"kpzlab: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"kpzlab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
