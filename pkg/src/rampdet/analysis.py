"""State-evolution recursion, scalar-channel denoiser MSE, and QQ diagnostics.

The scalar recursion

    sigma_{t+1}^2 = sigma_n^2 + (1/delta) * MSE(eta_t, sigma_t^2)

predicts the effective-noise variance of r under the i.i.d.-Gaussian
decoupling assumption. The MSE term is evaluated by Monte Carlo on the
scalar channel r = s + w, w ~ CN(0, sigma^2), with genie weights (computed
from the true s): state-dependent weights have no scalar-channel meaning,
and with them the vector recursion is known to drift from this prediction.
That drift is what the QQ diagnostic quantifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.stats

from .idls import compute_beta_weights
from .model import Constellation, SimConfig, make_constellation
from .ramp import ramp_denoise


@dataclass
class SeTrace:
    """Predicted effective variances and per-step denoiser MSEs.

    sigma2_seq[k] is the predicted variance of the k-th effective
    observation (sigma_0^2 = sigma_n^2 + E|s|^2/delta matches the all-zero
    start); mse_seq[k] is MSE(eta, sigma2_seq[k]). empirical_mse_seq is
    filled by paired simulation when available.
    """

    sigma2_seq: np.ndarray
    mse_seq: np.ndarray
    empirical_mse_seq: np.ndarray | None = None


@dataclass
class QqDiagnostic:
    """Empirical vs standard-normal quantiles plus the KS distance."""

    sorted_samples: np.ndarray
    theoretical_quantiles: np.ndarray
    ks_stat: float


def scalar_denoiser(lambda_eff: float, robust: bool = False) -> Callable:
    """Denoiser handle (r, v, beta) -> estimate for MSE evaluation."""

    def eta(r, v, beta):
        return ramp_denoise(r, v, beta, lambda_eff, robust=robust)

    return eta


def mse_of_denoiser(denoiser: Callable, sigma2: float, constellation: Constellation,
                    alpha: float, mc_samples: int, rng: np.random.Generator,
                    beta_source: str = "genie") -> tuple[float, float]:
    """Monte-Carlo E|eta(s + w) - s|^2 on the scalar channel, with its standard error.

    beta_source is restricted to "genie": the weights are computed from the
    true symbol, the only choice with a well-defined scalar-channel law.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    if mc_samples < 100:
        raise ValueError("mc_samples must be >= 100")
    if beta_source != "genie":
        raise ValueError("only genie beta weights are defined on the scalar channel")
    idx = rng.integers(0, constellation.order, size=mc_samples)
    s = constellation.points[idx]
    w = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(mc_samples) + 1j * rng.standard_normal(mc_samples))
    beta = compute_beta_weights(s, constellation, alpha)
    err2 = np.abs(denoiser(s + w, sigma2, beta) - s) ** 2
    mse = float(err2.mean())
    stderr = float(err2.std(ddof=1) / np.sqrt(mc_samples))
    return mse, stderr


def se_recursion(cfg: SimConfig, sigma_n2: float, steps: int, robust: bool = False,
                 mc_samples: int = 200_000, rng: np.random.Generator | None = None,
                 mse_fn: Callable[[float], float] | None = None) -> SeTrace:
    """Iterate the scalar variance recursion for `steps` steps.

    sigma_n2 is the noise variance of the system the message-passing loop
    actually runs on (the unit-column rescaling, physical sigma_n^2 / N).
    mse_fn, when given, replaces the Monte-Carlo MSE evaluation (test hook).
    """
    delta = cfg.n / cfg.m
    if delta <= 0:
        raise ValueError("aspect ratio must be > 0")
    const = make_constellation(cfg.modulation)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), 0x5E)))
    eta = scalar_denoiser(cfg.lambda_eff, robust=robust)

    sigma2 = sigma_n2 + 1.0 / delta  # E|s|^2 = 1 at the all-zero start
    sigma2_seq = [sigma2]
    mse_seq = []
    for _ in range(steps):
        if mse_fn is not None:
            mse = float(mse_fn(sigma2))
        else:
            mse, _ = mse_of_denoiser(eta, sigma2, const, cfg.alpha, mc_samples, rng)
        mse_seq.append(mse)
        sigma2 = sigma_n2 + mse / delta
        sigma2_seq.append(sigma2)
    return SeTrace(sigma2_seq=np.array(sigma2_seq), mse_seq=np.array(mse_seq))


def normalized_effective_errors(r_list, s_list, v_list) -> np.ndarray:
    """Pool normalized effective-noise quadratures over trials.

    The complex effective noise is modeled CN(0, v), so each quadrature has
    variance v/2; real and imaginary parts are divided by sqrt(v/2) and
    pooled as separate samples against a standard-normal reference.
    """
    chunks = []
    for r, s, v in zip(r_list, s_list, v_list):
        e = (np.asarray(r) - np.asarray(s)) / np.sqrt(v / 2.0)
        chunks.append(e.real)
        chunks.append(e.imag)
    return np.concatenate(chunks)


def qq_diagnostic(samples: np.ndarray, min_samples: int = 1000) -> QqDiagnostic:
    """Quantile pairing and KS distance of normalized errors against N(0, 1).

    samples must already be normalized real scalars (see
    normalized_effective_errors); theoretical quantiles use plotting
    positions (k - 0.5)/n.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < min_samples:
        raise ValueError(f"need >= {min_samples} pooled samples, got {samples.size}")
    sorted_samples = np.sort(samples)
    n = sorted_samples.size
    theo = scipy.stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    ks = float(scipy.stats.kstest(sorted_samples, "norm").statistic)
    return QqDiagnostic(sorted_samples=sorted_samples, theoretical_quantiles=theo, ks_stat=ks)
