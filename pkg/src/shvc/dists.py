"""Discretized logistic distributions and fixed-point CDF tables.

Probability masses are obtained by integrating a logistic density over
uniform bins; the first and last bins absorb the tails so every pmf sums
to exactly one over its grid.  ``quantize_to_cdf`` converts a real pmf
into integer frequencies summing to ``2**precision``, which is the only
representation the entropy coder consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_SCALE_MIN = -7.0
LOG_SCALE_MAX = 7.0

ROUND_STEP = 1e-4  # parameter grid used before table quantization


@dataclass(frozen=True)
class SymbolGrid:
    num_symbols: int
    origin: float      # real value of symbol 0
    bin_width: float

    def __post_init__(self):
        if self.num_symbols < 2:
            raise ValueError("grid needs at least 2 symbols")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")

    def value(self, symbol):
        """Real value at the centre of a symbol's bin."""
        return self.origin + np.asarray(symbol, dtype=np.float64) * self.bin_width

    def edges(self) -> np.ndarray:
        """Bin edges with the outermost edges pushed to +-infinity."""
        e = self.origin + (np.arange(self.num_symbols + 1) - 0.5) * self.bin_width
        e[0] = -np.inf
        e[-1] = np.inf
        return e


@dataclass(frozen=True)
class LogisticParams:
    mean: float
    log_scale: float

    def __post_init__(self):
        object.__setattr__(
            self, "log_scale",
            float(np.clip(self.log_scale, LOG_SCALE_MIN, LOG_SCALE_MAX)))


@dataclass(frozen=True)
class MixtureParams:
    components: tuple[LogisticParams, ...]
    logits: tuple[float, ...]

    def __post_init__(self):
        if len(self.components) < 1 or len(self.components) != len(self.logits):
            raise ValueError("need M >= 1 components with matching logits")

    def weights(self) -> np.ndarray:
        return softmax(np.asarray(self.logits, dtype=np.float64))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def round_to_grid(a: np.ndarray, step: float = ROUND_STEP) -> np.ndarray:
    """Snap values to a coarse grid so coder tables are platform-stable."""
    return np.round(np.asarray(a, dtype=np.float64) / step) * step


def logistic_pmf_rows(means, log_scales, grid: SymbolGrid) -> np.ndarray:
    """Vectorized pmf: broadcastable mean/log-scale arrays -> (..., S)."""
    means = np.asarray(means, dtype=np.float64)[..., None]
    scales = np.exp(np.clip(np.asarray(log_scales, dtype=np.float64),
                            LOG_SCALE_MIN, LOG_SCALE_MAX))[..., None]
    cdf = sigmoid((grid.edges() - means) / scales)
    cdf[..., 0] = 0.0
    cdf[..., -1] = 1.0
    return np.maximum(np.diff(cdf, axis=-1), 1e-40)


def mixture_pmf_rows(means, log_scales, logits, grid: SymbolGrid) -> np.ndarray:
    """Mixture pmf: (M, ...) parameter arrays -> (..., S)."""
    w = softmax(np.asarray(logits, dtype=np.float64), axis=0)
    comp = logistic_pmf_rows(means, log_scales, grid)  # (M, ..., S)
    return np.einsum("m...,m...s->...s", w, comp)


def discretized_logistic_pmf(symbol: int, p: LogisticParams,
                             grid: SymbolGrid) -> float:
    """Mass of one symbol under a discretized logistic."""
    if not 0 <= symbol < grid.num_symbols:
        raise IndexError(f"symbol {symbol} outside grid")
    return float(logistic_pmf_rows(p.mean, p.log_scale, grid)[symbol])


def mixture_pmf(symbol: int, m: MixtureParams, grid: SymbolGrid) -> float:
    """Mass of one symbol under a discretized logistic mixture."""
    if not 0 <= symbol < grid.num_symbols:
        raise IndexError(f"symbol {symbol} outside grid")
    means = np.array([c.mean for c in m.components])
    log_s = np.array([c.log_scale for c in m.components])
    return float(mixture_pmf_rows(means, log_s, np.asarray(m.logits), grid)[symbol])


def entropy_bits(pmf) -> float:
    """Shannon entropy in bits, with 0*log(0) taken as 0."""
    p = np.asarray(pmf, dtype=np.float64)
    nz = p > 0
    return float(-(p[nz] * np.log2(p[nz])).sum())


@dataclass(frozen=True)
class CdfTable:
    precision: int
    freqs: np.ndarray = field(repr=False)       # uint32, sums to 2**precision
    cumulative: np.ndarray = field(repr=False)  # uint32 prefix sums, len S+1

    def __post_init__(self):
        total = 1 << self.precision
        if int(self.freqs.sum()) != total or int(self.freqs.min()) < 1:
            raise ValueError("frequencies must be >= 1 and sum to 2**precision")

    @property
    def num_symbols(self) -> int:
        return len(self.freqs)


def quantize_rows(pmf: np.ndarray, precision: int) -> np.ndarray:
    """Quantize rows of pmfs to integer frequencies summing to 2**precision.

    Deterministic: freqs start at max(1, round(p * 2**P)) and the residual
    is balanced one unit at a time toward the largest (or away from the
    smallest) rounding remainders, ties broken by lower symbol index.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    n, s = pmf.shape
    total = 1 << precision
    if s > total:
        raise ValueError(f"{s} symbols exceed 2**{precision} capacity")
    ideal = pmf * total
    freqs = np.maximum(1, np.rint(ideal)).astype(np.int64)
    deficit = total - freqs.sum(axis=1)
    for row in np.nonzero(deficit)[0]:
        d = int(deficit[row])
        f = freqs[row]
        while d != 0:
            r = ideal[row] - f
            if d > 0:
                order = np.argsort(-r, kind="stable")
                take = min(d, s)
                f[order[:take]] += 1
                d -= take
            else:
                r = np.where(f > 1, r, np.inf)
                order = np.argsort(r, kind="stable")
                take = min(-d, int((f > 1).sum()))
                f[order[:take]] -= 1
                d += take
    return freqs.astype(np.uint32)


def quantize_to_cdf(pmf, precision: int) -> CdfTable:
    """Build a coder table from one pmf (see :func:`quantize_rows`)."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.min() < 0 or abs(pmf.sum() - 1.0) > 1e-6:
        raise ValueError("input is not a normalized pmf")
    freqs = quantize_rows(pmf, precision)[0]
    cum = np.zeros(len(freqs) + 1, dtype=np.uint32)
    np.cumsum(freqs, out=cum[1:])
    return CdfTable(precision=precision, freqs=freqs, cumulative=cum)


def cumulative_rows(freqs: np.ndarray) -> np.ndarray:
    """Prefix-sum matrix (n, S+1) for row-wise coder tables."""
    n, s = freqs.shape
    cum = np.zeros((n, s + 1), dtype=np.uint32)
    np.cumsum(freqs, axis=1, out=cum[:, 1:])
    return cum
