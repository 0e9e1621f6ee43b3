"""Command-line front end for the benchmark experiments.

Subcommands: ber, converge, se, qq, selfcheck, opcount. Configuration is a
flat key=value text file (see configs/), overridable with repeated
--set key=value flags and the shortcut flags below; the effective config is
echoed into every JSON sidecar. Exit codes: 0 success, 1 usage/config error,
2 runtime failure, 3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import baselines, harness, idls, ramp
from .model import SimConfig, hard_decision, make_constellation, sample_instance, trial_rng

_LIST_FIELDS = {"ebn0_db_grid", "detectors"}
_FIELD_TYPES = {f.name: f.type for f in dataclass_fields(SimConfig)}


class ConfigError(ValueError):
    pass


def parse_config_file(path: str | Path) -> dict:
    """Read a flat key = value config; '#' starts a comment, lists are comma-separated."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out: dict = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value, where=f"{p}:{lineno}")
    return out


def _coerce(key: str, value: str, where: str = "override"):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    if key in _LIST_FIELDS:
        items = [s.strip() for s in value.split(",") if s.strip()]
        return [float(s) for s in items] if key == "ebn0_db_grid" else items
    if key in ("m", "n", "trials", "t_max", "seed"):
        return int(value)
    if key in ("alpha", "lambda_eff", "epsilon"):
        return float(value)
    return value


def load_config(args) -> SimConfig:
    """Config precedence: file < --set overrides < shortcut flags."""
    raw = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = _coerce(key, value)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        raw["trials"] = args.trials
    if getattr(args, "detectors", None):
        raw["detectors"] = [s.strip() for s in args.detectors.split(",") if s.strip()]
    if getattr(args, "ebn0", None):
        raw["ebn0_db_grid"] = [float(s) for s in args.ebn0.split(",") if s.strip()]
    try:
        return SimConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ber(args) -> int:
    cfg = load_config(args)
    results = harness.run_ber_sweep(cfg, n_jobs=args.jobs)
    out = _outdir(args)
    harness.write_csv(out / "ber.csv", cfg, results)
    harness.write_json_sidecar(out / "ber.json", cfg, [r for r in results])
    print(f"{'detector':>14} {'Eb/N0':>7} {'BER':>12} {'avg_iter':>9} {'div':>4}")
    for r in results:
        print(f"{r.detector:>14} {r.ebn0_db:>7.2f} {r.ber:>12.3e} {r.avg_iterations:>9.1f} {r.divergence_failures:>4}")
    print(f"wrote {out / 'ber.csv'} and {out / 'ber.json'}")
    return 0


def cmd_converge(args) -> int:
    cfg = load_config(args)
    ebn0 = args.ebn0_single if args.ebn0_single is not None else cfg.ebn0_db_grid[0]
    # traces always run the full t_max (the epsilon check would truncate them);
    # --no-early-stop states this explicitly and is accepted as a no-op
    traces = harness.run_convergence_trace(cfg, ebn0)
    out = _outdir(args)
    harness.write_csv(out / "converge.csv", cfg, [t.summary for t in traces])
    records = [{
        "detector": t.detector, "ebn0_db": t.ebn0_db, "trials": t.trials,
        "ber_t": t.ber_t, "eps_mean_t": t.eps_mean_t,
        "frac_converged_by_t": t.frac_converged_by_t,
        "summary": t.summary, "wall_time_s": t.summary.wall_time_s,
    } for t in traces]
    harness.write_json_sidecar(out / "converge.json", cfg, records)
    for t in traces:
        tail = t.frac_converged_by_t[-1]
        print(f"{t.detector}: BER(t_max)={t.ber_t[-1]:.3e}, {100 * tail:.1f}% of trials "
              f"reached eps < {cfg.epsilon:g} within {cfg.t_max} iterations")
    print(f"wrote {out / 'converge.csv'} and {out / 'converge.json'}")
    return 0


def cmd_se(args) -> int:
    cfg = load_config(args)
    ebn0 = args.ebn0_single if args.ebn0_single is not None else cfg.ebn0_db_grid[0]
    comp = harness.run_se_comparison(cfg, ebn0, steps=args.steps, robust=args.robust)
    out = _outdir(args)
    rows = []
    print(f"{'t':>3} {'predicted':>11} {'genie':>11} {'state-dep':>11}")
    for t in range(1, comp.steps + 1):
        pred = comp.predicted.sigma2_seq[t - 1]
        rows.append({
            "t": t, "predicted_sigma2": pred,
            "genie_eff_var": comp.genie_eff_var[t - 1], "genie_mse": comp.genie_mse[t - 1],
            "state_eff_var": comp.state_eff_var[t - 1], "state_mse": comp.state_mse[t - 1],
        })
        print(f"{t:>3} {pred:>11.4e} {comp.genie_eff_var[t - 1]:>11.4e} {comp.state_eff_var[t - 1]:>11.4e}")
    mode = "genie" if args.genie else "both"
    if args.genie:
        rows = [{k: v for k, v in row.items() if not k.startswith("state_")} for row in rows]
    harness.write_json_sidecar(out / "se.json", cfg, [{"mode": mode, "ebn0_db": ebn0, "table": rows}])
    print(f"wrote {out / 'se.json'}")
    return 0


def cmd_qq(args) -> int:
    cfg = load_config(args)
    ebn0 = args.ebn0_single if args.ebn0_single is not None else cfg.ebn0_db_grid[0]
    pair = harness.run_qq_experiment(cfg, ebn0, at_iter=args.at_iter, robust=args.robust)
    out = _outdir(args)
    records = [{
        "ebn0_db": ebn0, "at_iter": pair.at_iter, "trials": pair.trials,
        "ks_state": pair.state.ks_stat, "ks_genie": pair.genie.ks_stat,
        "state_quantiles": pair.state.sorted_samples,
        "genie_quantiles": pair.genie.sorted_samples,
        "theoretical_quantiles": pair.state.theoretical_quantiles,
    }]
    harness.write_json_sidecar(out / "qq.json", cfg, records)
    print(f"KS(state-dependent) = {pair.state.ks_stat:.4f}, KS(genie) = {pair.genie.ks_stat:.4f} "
          f"at iteration {pair.at_iter} ({pair.trials} trials pooled)")
    print(f"wrote {out / 'qq.json'}")
    return 0


def cmd_opcount(args) -> int:
    cfg = load_config(args)
    doubled = SimConfig(**{**cfg.to_dict(), "m": 2 * cfg.m, "n": 2 * cfg.n})
    print(f"{'detector':>14} {'per-iter ops':>14} {'at (2M,2N)':>14} {'ratio':>7}")
    for name in cfg.detectors:
        base = harness.count_ops(name, cfg)
        big = harness.count_ops(name, doubled)
        print(f"{name:>14} {base:>14d} {big:>14d} {big / base:>7.2f}")
    return 0


def _check(name: str, passed: bool, detail: str, verbose: bool) -> bool:
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}"
    if verbose or not passed:
        line += f"  ({detail})"
    print(line)
    return passed


def cmd_selfcheck(args) -> int:
    """Fast oracle suite; exercises the analytic paths against independent checks."""
    rng = np.random.default_rng(20240901)
    const = make_constellation("qpsk")
    ok = True

    # denoiser vs coarse-to-fine grid search on the scalar objective
    worst = 0.0
    for robust in (False, True):
        for _ in range(60):
            r = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
            v = float(rng.uniform(0.05, 2.0))
            lam = float(rng.uniform(0.2, 3.0))
            s_prev = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
            beta = idls.compute_beta_weights(np.array([s_prev]), const, 0.1)
            got = ramp.ramp_denoise(np.array([r]), v, beta, lam, robust=robust)[0]
            ref = _grid_minimizer(r, v, lam, beta, const, robust)
            worst = max(worst, abs(got - ref))
    ok &= _check("denoiser-grid-search", worst <= 2e-3, f"max |analytic - grid| = {worst:.2e}, tol 2e-3", args.verbose)

    # analytic divergence vs central finite differences in the real coordinate
    worst = 0.0
    step = 1e-6
    for robust in (False, True):
        for _ in range(100):
            m = 8
            r = rng.uniform(-2, 2, m) + 1j * rng.uniform(-2, 2, m)
            v = float(rng.uniform(0.05, 2.0))
            lam = float(rng.uniform(0.2, 3.0))
            beta = idls.compute_beta_weights(rng.uniform(-2, 2, m) + 1j * rng.uniform(-2, 2, m), const, 0.1)
            got = ramp.denoiser_divergence(v, beta, lam, robust=robust)
            plus = ramp.ramp_denoise(r + step, v, beta, lam, robust=robust)
            minus = ramp.ramp_denoise(r - step, v, beta, lam, robust=robust)
            fd = float(np.mean((plus - minus).real) / (2 * step))
            worst = max(worst, abs(got - fd) / abs(fd))
    ok &= _check("divergence-finite-diff", worst <= 1e-6, f"max rel err = {worst:.2e}, tol 1e-6", args.verbose)

    # closed-form solve vs generic least-squares on the same normal equations
    worst = 0.0
    for _ in range(20):
        n, m = int(rng.integers(4, 17)), int(rng.integers(4, 17))
        h = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        beta = idls.compute_beta_weights(rng.standard_normal(m) + 1j * rng.standard_normal(m), const, 0.1)
        lam, nv = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2))
        got = idls.idls_solve_step(y, h, beta, lam, nv, robust=True)
        a = h.conj().T @ h + np.diag(nv + lam * beta.bv_agg)
        ref, *_ = np.linalg.lstsq(a, h.conj().T @ y + lam * beta.b_agg, rcond=None)
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    ok &= _check("closed-form-vs-solver", worst <= 1e-10, f"max rel err = {worst:.2e}, tol 1e-10", args.verbose)

    # robust detector agrees with exhaustive ML on small systems
    cfg = SimConfig(m=4, n=4, ebn0_db_grid=[18.0], trials=1, detectors=["robust-ramp"])
    agree = 0
    n_seeds = 50
    for k in range(n_seeds):
        inst = sample_instance(cfg, 18.0, trial_rng(cfg.seed, 0, k))
        s_ramp, _ = ramp.ramp_detect(inst.rx, inst.channel, inst.noise_var, cfg, robust=True)
        s_ml = baselines.ml_oracle_detect(inst.rx, inst.channel, const)
        agree += int(np.array_equal(hard_decision(s_ramp, const)[0], hard_decision(s_ml, const)[0]))
    frac = agree / n_seeds
    ok &= _check("ml-agreement", frac >= 0.9, f"agreement {frac:.2f} over {n_seeds} seeds, bound 0.90", args.verbose)

    return 0 if ok else 3


def _grid_minimizer(r, v, lam, beta, const, robust):
    """Coarse-to-fine grid argmin of the scalar objective (pitch 1e-3)."""
    bv = float(beta.bv_agg[0])
    b = complex(beta.b_agg[0])
    e_const = float(np.sum(beta.weights[:, 0] ** 2 * np.abs(const.points) ** 2))

    def best_on(grid_re, grid_im):
        s = grid_re[:, None] + 1j * grid_im[None, :]
        f = np.abs(r - s) ** 2 / v + lam * (bv * np.abs(s) ** 2 - 2 * (np.conj(b) * s).real + e_const)
        if robust:
            f = f + np.abs(s) ** 2
        i, j = np.unravel_index(np.argmin(f), f.shape)
        return s[i, j]

    coarse = best_on(np.arange(-3, 3, 0.05), np.arange(-3, 3, 0.05))
    fine_re = np.arange(coarse.real - 0.06, coarse.real + 0.06, 1e-3)
    fine_im = np.arange(coarse.imag - 0.06, coarse.imag + 0.06, 1e-3)
    return best_on(fine_re, fine_im)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rampdet", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_out=True):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--detectors", help="comma-separated detector list")
        sp.add_argument("--verbose", action="store_true")
        if needs_out:
            sp.add_argument("--out", default="results", help="output directory")

    sp = sub.add_parser("ber", help="BER sweep over the Eb/N0 grid")
    common(sp)
    sp.add_argument("--ebn0", help="comma-separated Eb/N0 grid override (dB)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    sp.set_defaults(fn=cmd_ber)

    sp = sub.add_parser("converge", help="per-iteration BER/eps traces")
    common(sp)
    sp.add_argument("--ebn0", dest="ebn0_single", type=float, help="single Eb/N0 point (dB)")
    sp.add_argument("--no-early-stop", action="store_true",
                    help="record full traces (always the case for this command)")
    sp.set_defaults(fn=cmd_converge)

    sp = sub.add_parser("se", help="variance recursion vs paired empirical runs")
    common(sp)
    sp.add_argument("--ebn0", dest="ebn0_single", type=float)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--genie", action="store_true", help="emit only the genie-weight pairing")
    sp.add_argument("--robust", action="store_true")
    sp.set_defaults(fn=cmd_se)

    sp = sub.add_parser("qq", help="effective-noise Gaussianity diagnostics")
    common(sp)
    sp.add_argument("--ebn0", dest="ebn0_single", type=float)
    sp.add_argument("--at-iter", type=int, default=15)
    sp.add_argument("--robust", action="store_true")
    sp.set_defaults(fn=cmd_qq)

    sp = sub.add_parser("selfcheck", help="fast oracle suite")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(fn=cmd_selfcheck)

    sp = sub.add_parser("opcount", help="per-iteration operation counts and scaling ratios")
    common(sp, needs_out=False)
    sp.set_defaults(fn=cmd_opcount)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, distinct from usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
