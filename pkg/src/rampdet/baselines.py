"""Reference detectors: ZF, LMMSE, standard AMP, and a brute-force ML oracle.

"Standard AMP" runs the identical message-passing loop but with the Bayes
posterior-mean denoiser for a uniform prior over the constellation,

    eta(r, v) = sum_i c_i w_i / sum_i w_i,   w_i = exp(-|r - c_i|^2 / v),

the conventional discrete-prior baseline (a sparsity soft-threshold is
meaningless for dense constellation-constrained signals).
"""

from __future__ import annotations

import warnings

import numpy as np

from .model import Constellation, SimConfig
from .ramp import (DetectorState, DivergenceError, V_FLOOR, effective_observation,
                   estimate_variance, residual_update)

ML_MAX_CANDIDATES = 2**20


def zf_detect(y: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Least-squares estimate; the minimum-norm solution when M > N.

    Rank deficiency (rank < min(N, M)) is reported as a warning; in the
    overloaded regime the null space is expected and the pseudo-inverse
    solution is returned.
    """
    y = np.asarray(y)
    h = np.asarray(h)
    s_hat, _, rank, _ = np.linalg.lstsq(h, y, rcond=None)
    if rank < min(h.shape):
        warnings.warn(f"channel rank-deficient: rank {rank} < min{h.shape}", stacklevel=2)
    return s_hat


def lmmse_detect(y: np.ndarray, h: np.ndarray, noise_var: float) -> np.ndarray:
    """LMMSE estimate (H^H H + sigma_n^2 I)^{-1} H^H y for unit-energy symbols."""
    if noise_var <= 0:
        raise ValueError("noise_var must be > 0")
    h = np.asarray(h)
    m = h.shape[1]
    a = h.conj().T @ h + noise_var * np.eye(m)
    return np.linalg.solve(a, h.conj().T @ np.asarray(y))


def bayes_denoise(r: np.ndarray, v: float, constellation: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance under a uniform prior and CN(0, v) noise.

    Returns (eta, var) where var is the per-component posterior variance;
    the Onsager divergence of the posterior mean is var / v.
    """
    v = max(float(v), V_FLOOR)
    c = constellation.points
    d2 = np.abs(np.asarray(r)[:, None] - c[None, :]) ** 2      # (M, K)
    logw = -(d2 - d2.min(axis=1, keepdims=True)) / v
    w = np.exp(logw)
    w_sum = w.sum(axis=1)
    eta = (w @ c) / w_sum
    second = (w @ np.abs(c) ** 2) / w_sum
    var = np.maximum(second - np.abs(eta) ** 2, 0.0)
    return eta, var


def standard_amp_detect(y: np.ndarray, h: np.ndarray, noise_var: float,
                        constellation: Constellation, cfg: SimConfig,
                        truth: np.ndarray | None = None, early_stop: bool = True,
                        record_effective: bool = False) -> tuple[np.ndarray, DetectorState]:
    """AMP loop with the Bayes posterior-mean denoiser.

    Same rescaled-system loop and stopping rule as the adaptive detector;
    only the denoiser and its divergence differ.
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    n_rx, m = h.shape
    delta = n_rx / m
    scale = np.sqrt(n_rx)
    ht = h / scale
    yt = y / scale

    s_hat = np.zeros(m, dtype=complex)
    z = np.zeros(n_rx, dtype=complex)
    state = DetectorState(s_hat=s_hat, residual=z, eff_var=0.0, iter=0, eps_t=np.inf,
                          aspect_ratio=delta, converged=False,
                          mse_seq=[] if truth is not None else None,
                          r_seq=[] if record_effective else None,
                          s_seq=[] if record_effective else None,
                          divergence_method="analytic-posterior-variance")

    eps_t = np.inf
    for t in range(1, cfg.t_max + 1):
        v = max(estimate_variance(z), V_FLOOR)
        r = effective_observation(s_hat, ht, z)
        s_new, post_var = bayes_denoise(r, v, constellation)
        g = float(np.mean(post_var) / v)
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


def ml_oracle_detect(y: np.ndarray, h: np.ndarray, constellation: Constellation,
                     chunk: int = 2**14) -> np.ndarray:
    """Exhaustive minimizer of ||y - H s||^2 over the full symbol lattice.

    Guarded to K^M <= 2^20 candidates (oracle use only). Candidates are
    enumerated in lexicographic symbol-index order and ties break toward the
    first (lexicographically smallest) minimizer.
    """
    y = np.asarray(y)
    h = np.asarray(h)
    m = h.shape[1]
    k = constellation.order
    total = k**m
    if total > ML_MAX_CANDIDATES:
        raise ValueError(f"K^M = {total} exceeds exhaustive-search guard {ML_MAX_CANDIDATES}")

    best_cost = np.inf
    best_idx = None
    powers = k ** np.arange(m - 1, -1, -1)  # leftmost symbol most significant
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        flat = np.arange(start, stop)
        idx = (flat[:, None] // powers[None, :]) % k     # (B, M) lexicographic
        cand = constellation.points[idx]                 # (B, M)
        resid = y[None, :] - cand @ h.T                  # (B, N)
        cost = np.einsum("bn,bn->b", resid, resid.conj()).real
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = float(cost[j])
            best_idx = idx[j]
    return constellation.points[best_idx]
