"""Message-passing detectors with the adaptive discrete-aware scalar denoiser.

Per iteration: estimate the effective-noise power from the residual,
form the matched-filtered effective observation r = s_hat + H^H z, recompute
the fractional-programming weights from the previous estimate, apply the
element-wise denoiser, and update the residual with the memoryless Onsager
correction (1/delta) * z * <eta'>.

The recursion is stated for a sensing matrix with (approximately) unit-norm
columns; physical channels drawn with CN(0,1) entries are rescaled internally
(y/sqrt(N), H/sqrt(N), noise_var/N). Otherwise the 1/delta Onsager factor
and the residual-power variance estimator are inconsistent and the loop
diverges. The exact solvers in `idls` are scale-invariant and take the raw
system; both target the same objectives with lam = lambda_eff * sigma_n^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .idls import BetaWeights, compute_beta_weights
from .model import SimConfig, make_constellation

V_FLOOR = 1e-12  # the SE/diagnostic code divides by v; the denoiser itself is fine at v = 0


class DivergenceError(RuntimeError):
    """Detector state became non-finite; carries the failing iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


def effective_observation(s_hat: np.ndarray, h: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Matched-filtered effective observation r = s_hat + H^H z."""
    h = np.asarray(h)
    if h.shape[0] != np.shape(z)[0] or h.shape[1] != np.shape(s_hat)[0]:
        raise ValueError(f"dimension mismatch: H is {h.shape}, s_hat {np.shape(s_hat)}, z {np.shape(z)}")
    return s_hat + h.conj().T @ z


def estimate_variance(z: np.ndarray) -> float:
    """Residual-power estimate of the effective-noise variance, ||z||^2 / N."""
    z = np.asarray(z)
    return float(np.vdot(z, z).real / z.size)


def ramp_denoise(r: np.ndarray, v: float, beta: BetaWeights, lambda_eff: float,
                 robust: bool = False) -> np.ndarray:
    """Element-wise minimizer of the weighted scalar objective.

    Solves, per component,

        min_s (1/v) |r_m - s|^2 + [robust] |s|^2 + lambda_eff * sum_i beta[i,m]^2 |s - c_i|^2

    whose closed form is (r + lambda_eff*v*b) / (1 + [robust]*v + lambda_eff*v*b_v).
    """
    if v < 0:
        raise ValueError("v must be >= 0")
    if lambda_eff < 0:
        raise ValueError("lambda_eff must be >= 0")
    r = np.asarray(r)
    if not (np.all(np.isfinite(r)) and np.isfinite(v)):
        raise ValueError("non-finite denoiser input")
    denom = 1.0 + lambda_eff * v * beta.bv_agg
    if robust:
        denom = denom + v
    return (r + lambda_eff * v * beta.b_agg) / denom


def denoiser_divergence(v: float, beta: BetaWeights, lambda_eff: float,
                        robust: bool = False) -> float:
    """Average Wirtinger derivative <eta'> = (1/M) sum_m d eta_m / d r_m.

    With the weights frozen, each component derivative is
    1 / (1 + [robust]*v + lambda_eff*v*b_v[m]), so 0 < <eta'> <= 1.
    """
    if v < 0:
        raise ValueError("v must be >= 0")
    if lambda_eff < 0:
        raise ValueError("lambda_eff must be >= 0")
    denom = 1.0 + lambda_eff * v * beta.bv_agg
    if robust:
        denom = denom + v
    return float(np.mean(1.0 / denom))


def residual_update(y: np.ndarray, h: np.ndarray, s_hat_next: np.ndarray,
                    z_prev: np.ndarray, divergence: float, aspect_ratio: float) -> np.ndarray:
    """Residual with Onsager correction: z = y - H s + (1/delta) * z_prev * <eta'>."""
    if aspect_ratio <= 0:
        raise ValueError("aspect_ratio must be > 0")
    h = np.asarray(h)
    if h.shape != (np.shape(y)[0], np.shape(s_hat_next)[0]):
        raise ValueError(f"dimension mismatch: H is {h.shape}, y {np.shape(y)}, s {np.shape(s_hat_next)}")
    return y - h @ s_hat_next + (divergence / aspect_ratio) * z_prev


@dataclass
class DetectorState:
    """Final iterate plus the append-only per-iteration trace.

    Trace arrays all have length ``iter``. ``v`` and the recorded effective
    observations are in the internally rescaled (unit-column) system. The
    first entry is the degenerate initialization pass (s_hat stays 0 while
    z picks up y), kept to mirror the published loop order.
    """

    s_hat: np.ndarray
    residual: np.ndarray
    eff_var: float
    iter: int
    eps_t: float
    aspect_ratio: float
    converged: bool
    v_seq: list[float] = field(default_factory=list)
    eps_seq: list[float] = field(default_factory=list)
    div_seq: list[float] = field(default_factory=list)
    mse_seq: list[float] | None = None          # (1/M)||s_hat - truth||^2 when truth given
    r_seq: list[np.ndarray] | None = None       # effective observations when recorded
    s_seq: list[np.ndarray] | None = None       # per-iteration estimates when recorded
    divergence_method: str = "analytic-wirtinger"


def ramp_detect(y: np.ndarray, h: np.ndarray, noise_var: float, cfg: SimConfig,
                robust: bool = False, genie_s: np.ndarray | None = None,
                truth: np.ndarray | None = None, early_stop: bool = True,
                record_effective: bool = False,
                s_init: np.ndarray | None = None) -> tuple[np.ndarray, DetectorState]:
    """Run the full detector loop on one instance.

    genie_s, when given, replaces the weight source: beta is computed from the
    true symbols instead of the previous estimate (diagnostic mode). truth
    only adds per-iteration MSE records. The epsilon stop is skipped on the
    first pass, which cannot move s_hat (v = 0 makes the denoiser the
    identity on r = 0) and only loads the residual with y.
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(h))):
        raise ValueError("non-finite observation or channel")
    n_rx, m = h.shape
    delta = n_rx / m
    const = make_constellation(cfg.modulation)

    scale = np.sqrt(n_rx)
    ht = h / scale
    yt = y / scale

    s_hat = np.zeros(m, dtype=complex) if s_init is None else np.asarray(s_init, dtype=complex).copy()
    z = np.zeros(n_rx, dtype=complex)
    state = DetectorState(s_hat=s_hat, residual=z, eff_var=0.0, iter=0, eps_t=np.inf,
                          aspect_ratio=delta, converged=False,
                          mse_seq=[] if truth is not None else None,
                          r_seq=[] if record_effective else None,
                          s_seq=[] if record_effective else None)

    eps_t = np.inf
    for t in range(1, cfg.t_max + 1):
        v = max(estimate_variance(z), V_FLOOR)
        r = effective_observation(s_hat, ht, z)
        beta = compute_beta_weights(genie_s if genie_s is not None else s_hat, const, cfg.alpha)
        s_new = ramp_denoise(r, v, beta, cfg.lambda_eff, robust=robust)
        g = denoiser_divergence(v, beta, cfg.lambda_eff, robust=robust)
        z = residual_update(yt, ht, s_new, z, g, delta)
        eps_t = float(np.linalg.norm(s_new - s_hat))
        s_hat = s_new

        if not (np.all(np.isfinite(s_hat)) and np.all(np.isfinite(z))):
            raise DivergenceError(f"detector state non-finite at iteration {t}", iteration=t)

        state.v_seq.append(v)
        state.eps_seq.append(eps_t)
        state.div_seq.append(g)
        if truth is not None:
            state.mse_seq.append(float(np.mean(np.abs(s_hat - truth) ** 2)))
        if record_effective:
            state.r_seq.append(r)
            state.s_seq.append(s_hat)
        state.iter = t

        if early_stop and t >= 2 and eps_t < cfg.epsilon:
            state.converged = True
            break

    state.s_hat = s_hat
    state.residual = z
    state.eff_var = max(estimate_variance(z), V_FLOOR)
    state.eps_t = eps_t
    return s_hat, state
