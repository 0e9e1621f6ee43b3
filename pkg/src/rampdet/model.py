"""System model: constellations, channel/signal/noise generation, Eb/N0 calibration.

The linear model is y = H s + n with H an N x M complex channel (entries
CN(0,1)), s drawn i.i.d. uniform from a unit-energy Gray-coded constellation,
and n circularly symmetric AWGN with per-component variance sigma_n^2.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

SUPPORTED_MODULATIONS = ("qpsk", "qam16", "qam64")


@dataclass(frozen=True, eq=False)
class Constellation:
    """Square QAM alphabet with Gray bit labels and unit average energy.

    Attributes:
        name: modulation identifier ("qpsk", "qam16", "qam64").
        points: (K,) complex array, mean |c|^2 = 1.
        bit_labels: (K, b) 0/1 int array; row i labels points[i].
        bits_per_symbol: b, with K = 2**b.
    """

    name: str
    points: np.ndarray
    bit_labels: np.ndarray
    bits_per_symbol: int

    @property
    def order(self) -> int:
        return self.points.size

    def labels_as_strings(self) -> list[str]:
        return ["".join(str(b) for b in row) for row in self.bit_labels]


def _gray(k: int) -> int:
    return k ^ (k >> 1)


@lru_cache(maxsize=None)
def make_constellation(modulation: str) -> Constellation:
    """Build a unit-energy Gray-coded square constellation.

    QPSK points are (+-1 +-1j)/sqrt(2); QAM levels are the odd integers
    scaled for unit average symbol energy. Bit labels concatenate a
    binary-reflected Gray code per axis (real bits first), so nearest
    neighbors along either axis differ in exactly one bit.
    """
    mod = modulation.lower()
    if mod not in SUPPORTED_MODULATIONS:
        raise ValueError(f"unsupported modulation {modulation!r}; expected one of {SUPPORTED_MODULATIONS}")
    b = {"qpsk": 2, "qam16": 4, "qam64": 6}[mod]
    side = 2 ** (b // 2)
    levels = np.arange(side) * 2 - (side - 1)  # ascending odd integers
    scale = np.sqrt(2.0 * np.mean(levels.astype(float) ** 2))

    points = np.empty(side * side, dtype=complex)
    labels = np.empty((side * side, b), dtype=np.int8)
    half = b // 2
    for k in range(side):  # real axis position
        re_bits = [(_gray(k) >> (half - 1 - j)) & 1 for j in range(half)]
        for l in range(side):  # imag axis position
            im_bits = [(_gray(l) >> (half - 1 - j)) & 1 for j in range(half)]
            i = k * side + l
            points[i] = (levels[k] + 1j * levels[l]) / scale
            labels[i] = re_bits + im_bits
    return Constellation(name=mod, points=points, bit_labels=labels, bits_per_symbol=b)


def noise_variance_from_ebn0(ebn0_db: float, m: int, bits: int) -> float:
    """Noise variance sigma_n^2 = M / (b * 10^(Eb/N0 / 10))."""
    if m < 1 or bits < 1:
        raise ValueError("m and bits must be >= 1")
    return m / (bits * 10.0 ** (ebn0_db / 10.0))


@dataclass(frozen=True, eq=False)
class SystemInstance:
    """One realization of y = H s + n."""

    channel: np.ndarray      # (N, M) complex
    tx_symbols: np.ndarray   # (M,) complex, entries in the constellation
    tx_indices: np.ndarray   # (M,) int, constellation indices of tx_symbols
    noise: np.ndarray        # (N,) complex
    rx: np.ndarray           # (N,) complex
    noise_var: float
    dims: tuple[int, int]    # (N, M)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.channel, self.tx_symbols, self.noise, self.rx):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr(self.noise_var).encode())
        return h.hexdigest()[:16]


@dataclass
class SimConfig:
    """Experiment configuration; defaults follow the benchmark conventions."""

    m: int = 32
    n: int = 26
    modulation: str = "qpsk"
    ebn0_db_grid: list[float] = field(default_factory=lambda: [6.0, 10.0, 14.0])
    trials: int = 100
    alpha: float = 0.1
    lambda_eff: float = 1.0
    t_max: int = 100
    epsilon: float = 1e-6
    seed: int = 12345
    detectors: list[str] = field(default_factory=lambda: ["ramp", "robust-ramp", "lmmse"])

    def __post_init__(self):
        self.modulation = str(self.modulation).lower()
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.lambda_eff < 0:
            raise ValueError("lambda_eff must be >= 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.modulation not in SUPPORTED_MODULATIONS:
            raise ValueError(f"unsupported modulation {self.modulation!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must fit in 64 unsigned bits")
        self.ebn0_db_grid = [float(x) for x in self.ebn0_db_grid]
        self.detectors = [str(d) for d in self.detectors]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def trial_rng(master_seed: int, ebn0_index: int, trial_index: int) -> np.random.Generator:
    """Deterministic per-trial substream, independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), int(ebn0_index), int(trial_index))))


def sample_instance(cfg: SimConfig, ebn0_db: float, rng: np.random.Generator) -> SystemInstance:
    """Draw one (H, s, n, y) realization at the given Eb/N0.

    H entries are i.i.d. CN(0,1), s is uniform i.i.d. over the constellation,
    n is i.i.d. CN(0, sigma_n^2) with sigma_n^2 from noise_variance_from_ebn0.
    """
    const = make_constellation(cfg.modulation)
    n_rx, m = cfg.n, cfg.m
    sigma2 = noise_variance_from_ebn0(ebn0_db, m, const.bits_per_symbol)

    h = (rng.standard_normal((n_rx, m)) + 1j * rng.standard_normal((n_rx, m))) / np.sqrt(2.0)
    idx = rng.integers(0, const.order, size=m)
    s = const.points[idx]
    w = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx))
    y = h @ s + w
    return SystemInstance(channel=h, tx_symbols=s, tx_indices=idx, noise=w, rx=y,
                          noise_var=sigma2, dims=(n_rx, m))


def hard_decision(s_hat: np.ndarray, constellation: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Map each estimate to the nearest constellation point.

    Returns (indices, bits) where bits is the (M, b) Gray label matrix of the
    decided points. Ties break toward the lowest point index.
    """
    s_hat = np.asarray(s_hat)
    if not np.all(np.isfinite(s_hat)):
        raise ValueError("non-finite entries in s_hat")
    d2 = np.abs(s_hat[:, None] - constellation.points[None, :]) ** 2
    idx = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index on ties
    return idx, constellation.bit_labels[idx]
