"""Discrete-aware message-passing and exact IDLS detectors for overloaded MIMO.

Library layout:

- model:     constellations, channel/noise generation, Eb/N0 calibration
- idls:      fractional-programming weights and the exact O(M^3) solvers
- ramp:      the low-complexity message-passing detectors (base and robust)
- baselines: ZF, LMMSE, standard AMP, exhaustive ML oracle
- analysis:  state evolution, denoiser MSE, QQ/KS Gaussianity diagnostics
- harness:   reproducible Monte-Carlo experiments and result persistence
- cli:       `rampdet` command-line front end
"""

from .model import (Constellation, SimConfig, SystemInstance, hard_decision,
                    make_constellation, noise_variance_from_ebn0, sample_instance, trial_rng)
from .idls import BetaWeights, SolveError, compute_beta_weights, idls_detect, idls_solve_step
from .ramp import (DetectorState, DivergenceError, denoiser_divergence, effective_observation,
                   estimate_variance, ramp_denoise, ramp_detect, residual_update)
from .baselines import (bayes_denoise, lmmse_detect, ml_oracle_detect, standard_amp_detect,
                        zf_detect)
from .analysis import (QqDiagnostic, SeTrace, mse_of_denoiser, normalized_effective_errors,
                       qq_diagnostic, scalar_denoiser, se_recursion)
from .harness import (ConvergenceTrace, QqPair, RunResult, SeComparison, count_ops,
                      run_ber_sweep, run_convergence_trace, run_qq_experiment,
                      run_se_comparison, write_csv, write_json_sidecar)

__version__ = "0.1.0"
