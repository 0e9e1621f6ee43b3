"""Monte-Carlo experiment driver: BER sweeps, convergence/SE/QQ experiments.

Trials are seeded with per-(ebn0, trial) substreams from the master seed, so
results are independent of execution order and identical instances are fed to
every detector in a sweep (paired comparison). Detector divergence is counted
per trial (all bits of the trial scored as errors), never fatal.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import baselines, idls, ramp
from .analysis import QqDiagnostic, SeTrace, normalized_effective_errors, qq_diagnostic, se_recursion
from .model import (SimConfig, SystemInstance, hard_decision, make_constellation,
                    noise_variance_from_ebn0, sample_instance, trial_rng)

CSV_HEADER = ("detector,m,n,modulation,ebn0_db,trials,bit_errors,total_bits,"
              "ber,avg_iterations,divergence_failures,wall_time_s,op_count")

DETECTOR_IDS = ("ramp", "robust-ramp", "idls-base", "idls-robust",
                "lmmse", "zf", "standard-amp", "ml")

MESSAGE_PASSING_IDS = ("ramp", "robust-ramp", "standard-amp")
ITERATIVE_IDS = MESSAGE_PASSING_IDS + ("idls-base", "idls-robust")


@dataclass
class RunResult:
    """Aggregated outcome for one (detector, Eb/N0) cell."""

    config_digest: str
    detector: str
    ebn0_db: float
    trials: int
    bit_errors: int
    total_bits: int
    ber: float
    avg_iterations: float
    divergence_failures: int
    wall_time_s: float
    op_count: int

    def to_csv_row(self, cfg: SimConfig) -> str:
        # wall_time_s is intentionally blank in CSV output: rows must be a pure
        # function of (config, seed) so reruns are byte-identical; measured
        # timing lives in the JSON sidecar.
        return ",".join([
            self.detector, str(cfg.m), str(cfg.n), cfg.modulation, repr(float(self.ebn0_db)),
            str(self.trials), str(self.bit_errors), str(self.total_bits), repr(self.ber),
            repr(self.avg_iterations), str(self.divergence_failures), "", str(self.op_count),
        ])


def detect(name: str, inst: SystemInstance, cfg: SimConfig) -> tuple[np.ndarray, int, bool]:
    """Run one detector on one instance; returns (estimate, iterations, diverged)."""
    y, h, nv = inst.rx, inst.channel, inst.noise_var
    try:
        if name == "ramp":
            s_hat, state = ramp.ramp_detect(y, h, nv, cfg, robust=False)
            return s_hat, state.iter, False
        if name == "robust-ramp":
            s_hat, state = ramp.ramp_detect(y, h, nv, cfg, robust=True)
            return s_hat, state.iter, False
        if name == "standard-amp":
            const = make_constellation(cfg.modulation)
            s_hat, state = baselines.standard_amp_detect(y, h, nv, const, cfg)
            return s_hat, state.iter, False
        if name == "idls-base":
            s_hat, trace = idls.idls_detect(y, h, nv, cfg, robust=False)
            return s_hat, trace["iterations"], False
        if name == "idls-robust":
            s_hat, trace = idls.idls_detect(y, h, nv, cfg, robust=True)
            return s_hat, trace["iterations"], False
        if name == "lmmse":
            return baselines.lmmse_detect(y, h, nv), 1, False
        if name == "zf":
            return baselines.zf_detect(y, h), 1, False
        if name == "ml":
            const = make_constellation(cfg.modulation)
            return baselines.ml_oracle_detect(y, h, const), 1, False
    except ramp.DivergenceError as exc:
        return np.zeros(cfg.m, dtype=complex), exc.iteration, True
    raise ValueError(f"unknown detector {name!r}; known: {DETECTOR_IDS}")


def _run_trial(cfg: SimConfig, e_idx: int, ebn0_db: float, k: int, instance_fn=None):
    """One paired trial: every detector sees the identical instance."""
    rng = trial_rng(cfg.seed, e_idx, k)
    inst = (instance_fn or sample_instance)(cfg, ebn0_db, rng)
    const = make_constellation(cfg.modulation)
    true_bits = const.bit_labels[inst.tx_indices]
    out = {}
    for name in cfg.detectors:
        t0 = time.perf_counter()
        s_hat, iters, diverged = detect(name, inst, cfg)
        wall = time.perf_counter() - t0
        if diverged or not np.all(np.isfinite(s_hat)):
            errs = true_bits.size
            diverged = True
        else:
            _, bits = hard_decision(s_hat, const)
            errs = int(np.sum(bits != true_bits))
        out[name] = (errs, int(iters), bool(diverged), wall)
    return out


def run_ber_sweep(cfg: SimConfig, n_jobs: int = 1, instance_fn=None) -> list[RunResult]:
    """Paired BER sweep over cfg.ebn0_db_grid and cfg.detectors.

    Bit errors aggregate over Gray-demapped hard decisions; a diverged trial
    contributes all its bits as errors. With n_jobs != 1 trials run in
    parallel (joblib); substream seeding makes the tallies bit-identical to a
    serial run.
    """
    for name in cfg.detectors:
        if name not in DETECTOR_IDS:
            raise ValueError(f"unknown detector {name!r}; known: {DETECTOR_IDS}")
    const = make_constellation(cfg.modulation)
    if "ml" in cfg.detectors and const.order**cfg.m > baselines.ML_MAX_CANDIDATES:
        raise ValueError("ml detector requested but K^M exceeds the exhaustive-search guard")

    digest = cfg.digest()
    bits_per_trial = cfg.m * const.bits_per_symbol
    results = []
    for e_idx, ebn0_db in enumerate(cfg.ebn0_db_grid):
        if n_jobs == 1:
            # BLAS thread-sync overhead dominates at these matrix sizes
            with threadpool_limits(limits=1):
                per_trial = [_run_trial(cfg, e_idx, ebn0_db, k, instance_fn) for k in range(cfg.trials)]
        else:
            from joblib import Parallel, delayed
            per_trial = Parallel(n_jobs=n_jobs)(
                delayed(_run_trial)(cfg, e_idx, ebn0_db, k, instance_fn) for k in range(cfg.trials)
            )
        for name in cfg.detectors:
            errs = sum(t[name][0] for t in per_trial)
            iters = sum(t[name][1] for t in per_trial)
            div = sum(1 for t in per_trial if t[name][2])
            wall = sum(t[name][3] for t in per_trial)
            total_bits = cfg.trials * bits_per_trial
            results.append(RunResult(
                config_digest=digest, detector=name, ebn0_db=float(ebn0_db), trials=cfg.trials,
                bit_errors=errs, total_bits=total_bits, ber=errs / total_bits,
                avg_iterations=iters / cfg.trials, divergence_failures=div,
                wall_time_s=wall, op_count=count_ops(name, cfg, iterations=iters),
            ))
    return results


@dataclass
class ConvergenceTrace:
    """Per-iteration pooled BER and update norms, early stop disabled."""

    detector: str
    ebn0_db: float
    trials: int
    ber_t: np.ndarray            # (t_max,)
    eps_mean_t: np.ndarray       # (t_max,)
    frac_converged_by_t: np.ndarray  # fraction of trials with eps < cfg.epsilon by iteration t
    summary: RunResult


def run_convergence_trace(cfg: SimConfig, ebn0_db: float, detectors=None,
                          instance_fn=None) -> list[ConvergenceTrace]:
    """Record BER(t) and eps_t for t = 1..t_max on iterative detectors.

    Every trial runs the full t_max iterations (no early stop) so the
    per-iteration averages are over all trials.
    """
    names = list(detectors or [d for d in cfg.detectors if d in ITERATIVE_IDS])
    for name in names:
        if name not in ITERATIVE_IDS:
            raise ValueError(f"{name!r} has no per-iteration trace; iterative detectors: {ITERATIVE_IDS}")
    const = make_constellation(cfg.modulation)
    digest = cfg.digest()
    bits_per_trial = cfg.m * const.bits_per_symbol

    err_t = {n: np.zeros(cfg.t_max, dtype=np.int64) for n in names}
    eps_t = {n: np.zeros(cfg.t_max) for n in names}
    conv_iter = {n: [] for n in names}
    wall = {n: 0.0 for n in names}
    div = {n: 0 for n in names}

    with threadpool_limits(limits=1):
        _convergence_trials(cfg, ebn0_db, names, instance_fn, const,
                            err_t, eps_t, conv_iter, wall, div)

    out = []
    total_bits = cfg.trials * bits_per_trial
    for name in names:
        frac = np.array([np.mean([c <= t + 1 for c in conv_iter[name]]) if conv_iter[name] else 0.0
                         for t in range(cfg.t_max)])
        summary = RunResult(
            config_digest=digest, detector=name, ebn0_db=float(ebn0_db), trials=cfg.trials,
            bit_errors=int(err_t[name][-1]), total_bits=total_bits,
            ber=int(err_t[name][-1]) / total_bits, avg_iterations=float(cfg.t_max),
            divergence_failures=div[name], wall_time_s=wall[name],
            op_count=count_ops(name, cfg, iterations=cfg.t_max * cfg.trials),
        )
        out.append(ConvergenceTrace(
            detector=name, ebn0_db=float(ebn0_db), trials=cfg.trials,
            ber_t=err_t[name] / total_bits, eps_mean_t=eps_t[name] / cfg.trials,
            frac_converged_by_t=frac, summary=summary,
        ))
    return out


def _convergence_trials(cfg, ebn0_db, names, instance_fn, const, err_t, eps_t, conv_iter, wall, div):
    for k in range(cfg.trials):
        rng = trial_rng(cfg.seed, 0, k)
        inst = (instance_fn or sample_instance)(cfg, ebn0_db, rng)
        true_bits = const.bit_labels[inst.tx_indices]
        for name in names:
            t0 = time.perf_counter()
            s_seq, eps_seq = _trace_detector(name, inst, cfg)
            wall[name] += time.perf_counter() - t0
            if s_seq is None:
                div[name] += 1
                err_t[name] += true_bits.size
                conv_iter[name].append(np.inf)
                continue
            for t in range(cfg.t_max):
                _, bits = hard_decision(s_seq[min(t, len(s_seq) - 1)], const)
                err_t[name][t] += int(np.sum(bits != true_bits))
            padded = np.pad(eps_seq, (0, cfg.t_max - len(eps_seq)), constant_values=eps_seq[-1])
            eps_t[name] += padded
            # first-passage iteration of the update-norm criterion (init pass excluded)
            hit = np.nonzero(np.asarray(eps_seq[1:]) < cfg.epsilon)[0]
            conv_iter[name].append(int(hit[0]) + 2 if hit.size else np.inf)


def _trace_detector(name: str, inst: SystemInstance, cfg: SimConfig):
    """Full-length per-iteration estimates and update norms, or (None, None) on divergence."""
    try:
        if name in ("ramp", "robust-ramp"):
            _, state = ramp.ramp_detect(inst.rx, inst.channel, inst.noise_var, cfg,
                                        robust=(name == "robust-ramp"), early_stop=False,
                                        record_effective=True)
            return state.s_seq, state.eps_seq
        if name == "standard-amp":
            const = make_constellation(cfg.modulation)
            _, state = baselines.standard_amp_detect(inst.rx, inst.channel, inst.noise_var,
                                                     const, cfg, early_stop=False,
                                                     record_effective=True)
            return state.s_seq, state.eps_seq
        _, trace = idls.idls_detect(inst.rx, inst.channel, inst.noise_var, cfg,
                                    robust=(name == "idls-robust"), early_stop=False,
                                    record_estimates=True)
        return trace["s_seq"], list(trace["eps_t"])
    except ramp.DivergenceError:
        return None, None


@dataclass
class SeComparison:
    """SE prediction paired with empirical per-iteration statistics.

    Row t (1-based, length `steps`) pairs predicted.sigma2_seq[t-1] with the
    measured effective variance of the t-th real effective observation (the
    degenerate initialization pass is excluded from the pairing).
    """

    predicted: SeTrace
    genie_eff_var: np.ndarray
    genie_mse: np.ndarray
    state_eff_var: np.ndarray
    state_mse: np.ndarray
    steps: int


def run_se_comparison(cfg: SimConfig, ebn0_db: float, steps: int = 10, robust: bool = False,
                      mc_samples: int = 200_000, mse_fn=None) -> SeComparison:
    """Pair the scalar variance recursion with genie and state-dependent runs.

    The recursion is evaluated on the rescaled system (noise variance
    sigma_n^2 / N) with genie weights; empirical statistics come from paired
    detector runs on identical instances.
    """
    const = make_constellation(cfg.modulation)
    sigma2 = noise_variance_from_ebn0(ebn0_db, cfg.m, const.bits_per_symbol)
    predicted = se_recursion(cfg, sigma2 / cfg.n, steps, robust=robust,
                             mc_samples=mc_samples, mse_fn=mse_fn)

    run_cfg = SimConfig(**{**cfg.to_dict(), "t_max": steps + 1})
    g_eff = np.zeros(steps)
    g_mse = np.zeros(steps)
    s_eff = np.zeros(steps)
    s_mse = np.zeros(steps)
    with threadpool_limits(limits=1):
        for k in range(cfg.trials):
            rng = trial_rng(cfg.seed, 0, k)
            inst = sample_instance(run_cfg, ebn0_db, rng)
            s_true = inst.tx_symbols
            for tag, acc_eff, acc_mse in (("genie", g_eff, g_mse), ("state", s_eff, s_mse)):
                _, state = ramp.ramp_detect(inst.rx, inst.channel, inst.noise_var, run_cfg,
                                            robust=robust, early_stop=False, record_effective=True,
                                            genie_s=s_true if tag == "genie" else None)
                for t in range(1, steps + 1):
                    acc_eff[t - 1] += np.mean(np.abs(state.r_seq[t] - s_true) ** 2)
                    acc_mse[t - 1] += np.mean(np.abs(state.s_seq[t] - s_true) ** 2)
    for arr in (g_eff, g_mse, s_eff, s_mse):
        arr /= cfg.trials
    return SeComparison(predicted=predicted, genie_eff_var=g_eff, genie_mse=g_mse,
                        state_eff_var=s_eff, state_mse=s_mse, steps=steps)


@dataclass
class QqPair:
    """Gaussianity diagnostics of the state-dependent and genie runs."""

    state: QqDiagnostic
    genie: QqDiagnostic
    at_iter: int
    trials: int


def run_qq_experiment(cfg: SimConfig, ebn0_db: float, at_iter: int,
                      robust: bool = False) -> QqPair:
    """Pool normalized effective-noise samples at a fixed iteration.

    Runs state-dependent and genie-weight detectors on identical instances,
    normalizes (r - s)/sqrt(v) at real iteration `at_iter`, and computes both
    QQ diagnostics. Requires >= 1000 pooled samples.
    """
    if at_iter < 1:
        raise ValueError("at_iter must be >= 1")
    run_cfg = SimConfig(**{**cfg.to_dict(), "t_max": max(cfg.t_max, at_iter + 1)})
    pools = {"state": ([], [], []), "genie": ([], [], [])}
    with threadpool_limits(limits=1):
        for k in range(cfg.trials):
            rng = trial_rng(cfg.seed, 0, k)
            inst = sample_instance(run_cfg, ebn0_db, rng)
            for tag in ("state", "genie"):
                _, state = ramp.ramp_detect(inst.rx, inst.channel, inst.noise_var, run_cfg,
                                            robust=robust, early_stop=False, record_effective=True,
                                            genie_s=inst.tx_symbols if tag == "genie" else None)
                rs, ss, vs = pools[tag]
                rs.append(state.r_seq[at_iter])
                ss.append(inst.tx_symbols)
                vs.append(state.v_seq[at_iter])
    diag = {tag: qq_diagnostic(normalized_effective_errors(*pools[tag])) for tag in pools}
    return QqPair(state=diag["state"], genie=diag["genie"], at_iter=at_iter, trials=cfg.trials)


def count_ops(detector: str, cfg: SimConfig, iterations: int = 1) -> int:
    """Per-iteration complex multiply-accumulate count, times `iterations`.

    Message-passing detectors are dominated by the two matrix-vector products
    (2NM), plus the K*M weight/denoiser stage and O(M + N) vector work. The
    exact solvers re-factorize the M x M normal matrix every iteration
    (M^3/3, Gram matrix cached); one-shot linear detectors pay the Gram
    product once.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    m, n = cfg.m, cfg.n
    k = make_constellation(cfg.modulation).order
    if detector in MESSAGE_PASSING_IDS:
        per_iter = 2 * n * m + k * m + 3 * m + 2 * n
    elif detector in ("idls-base", "idls-robust"):
        per_iter = m**3 // 3 + k * m + 3 * m
    elif detector in ("lmmse", "zf"):
        per_iter = n * m * m + m**3 // 3 + n * m
    elif detector == "ml":
        total = k**m
        if total > baselines.ML_MAX_CANDIDATES:
            raise ValueError("K^M exceeds the exhaustive-search guard")
        per_iter = total * n * m
    else:
        raise ValueError(f"unknown detector {detector!r}")
    return per_iter * iterations


def write_csv(path, cfg: SimConfig, results: list[RunResult]) -> None:
    """Write the summary CSV; byte-identical across reruns of the same config."""
    lines = [f"# config_digest={cfg.digest()}", f"# seed={cfg.seed}", CSV_HEADER]
    lines += [r.to_csv_row(cfg) for r in results]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_json_sidecar(path, cfg: SimConfig, records: list[dict]) -> None:
    """Full provenance sidecar: config, master seed, and per-iteration traces."""
    payload = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seed": int(cfg.seed),
        "records": records,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, default=_json_default)
        f.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, RunResult):
        return asdict(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")
