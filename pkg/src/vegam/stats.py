"""Weight-distribution diagnostics, zero-map probability theory with a
Monte Carlo check, and McNemar's test for paired classifier comparison."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as sps

EXACT_MCNEMAR_LIMIT = 25


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


@dataclass
class WeightStats:
    mean: float
    variance: float
    count: int
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    skewness: float
    excess_kurtosis: float
    ks_statistic: float
    ks_pvalue: float
    normaltest_pvalue: float
    degenerate: bool

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def looks_normal(self, alpha: float = 0.05) -> bool:
        return (not self.degenerate) and self.ks_pvalue > alpha and self.normaltest_pvalue > alpha


def weight_stats(weights) -> WeightStats:
    """Moments, histogram (Freedman-Diaconis bins) and normality diagnostics.

    The KS distance is taken against the Gaussian fitted by moments, so its
    p-value is conservative; the D'Agostino-Pearson test covers the
    skewness/kurtosis side.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size < 30:
        raise ValueError(f"need at least 30 weights, got {w.size}")
    mean = float(w.mean())
    var = float(np.mean((w - mean) ** 2))
    degenerate = var == 0.0
    if degenerate:
        counts, edges = np.array([w.size]), np.array([w[0] - 0.5, w[0] + 0.5])
        return WeightStats(mean, 0.0, w.size, counts, edges, 0.0, 0.0, 0.0, 1.0, 1.0, True)
    counts, edges = np.histogram(w, bins="fd")
    ks = sps.kstest(w, "norm", args=(mean, np.sqrt(var)))
    nt = sps.normaltest(w)
    return WeightStats(
        mean=mean,
        variance=var,
        count=w.size,
        hist_counts=counts,
        hist_edges=edges,
        skewness=float(sps.skew(w)),
        excess_kurtosis=float(sps.kurtosis(w)),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        normaltest_pvalue=float(nt.pvalue),
        degenerate=False,
    )


@dataclass
class ZeroMapAnalysis:
    mu1: np.ndarray  # per-pixel mean of the Hadamard map
    sigma1: np.ndarray  # per-pixel std of the Hadamard map
    n: int
    p_modified: np.ndarray  # Pr(X_ij > 0)
    p_classical: np.ndarray  # Pr(Y_ij > 0)
    degenerate: np.ndarray  # pixels with sigma1 == 0


def zero_map_probs(A, mu: float, sigma: float) -> ZeroMapAnalysis:
    """Per-pixel probability that each CAM variant is positive.

    With i.i.d. N(mu, sigma^2) weights and fixed activations ``A`` (K, n, n),
    the Hadamard map is N(mu1, sigma1^2) per pixel and the averaged-gradient
    map has its z-score multiplied by n.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"activation stack must be (K, n, n), got {A.shape}")
    n = A.shape[1]
    mu1 = mu * A.sum(axis=0)
    sigma1 = sigma * np.sqrt((A * A).sum(axis=0))
    degenerate = sigma1 == 0
    z = np.divide(mu1, sigma1, out=np.zeros_like(mu1), where=~degenerate)
    p_mod = np.where(degenerate, 0.5, normal_cdf(z))
    p_cls = np.where(degenerate, 0.5, normal_cdf(n * z))
    return ZeroMapAnalysis(mu1, sigma1, n, p_mod, p_cls, degenerate)


@dataclass
class MonteCarloResult:
    trials: int
    frac_modified: np.ndarray  # per-pixel fraction with X_ij > 0
    frac_classical: np.ndarray
    zero_modified: float  # fraction of all-zero maps
    zero_classical: float

    def standard_error(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return np.sqrt(p * (1 - p) / self.trials)


def zero_map_monte_carlo(A, mu: float, sigma: float, trials: int = 10_000, seed: int = 0,
                         chunk: int = 250) -> MonteCarloResult:
    """Draw weight stacks i.i.d. N(mu, sigma^2) and build both CAM variants."""
    if trials < 1000:
        raise ValueError(f"need at least 1000 trials, got {trials}")
    A = np.asarray(A, dtype=np.float64)
    K, n, _ = A.shape
    rng = np.random.default_rng(seed)
    pos_mod = np.zeros((n, n))
    pos_cls = np.zeros((n, n))
    zero_mod = zero_cls = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        W = rng.normal(mu, sigma, size=(m, K, n, n))
        X = np.einsum("tkij,kij->tij", W, A)
        alpha = W.mean(axis=(2, 3))
        Y = np.einsum("tk,kij->tij", alpha, A)
        pos_mod += (X > 0).sum(axis=0)
        pos_cls += (Y > 0).sum(axis=0)
        zero_mod += int(np.sum(~np.any(X > 0, axis=(1, 2))))
        zero_cls += int(np.sum(~np.any(Y > 0, axis=(1, 2))))
        done += m
    return MonteCarloResult(trials, pos_mod / trials, pos_cls / trials, zero_mod / trials, zero_cls / trials)


@dataclass(frozen=True)
class ContingencyTable:
    a: int  # both correct
    b: int  # only the first (baseline) model correct
    c: int  # only the second (VEGAM) model correct
    d: int  # both wrong

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency cells must be non-negative")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    @classmethod
    def from_correctness(cls, first, second) -> "ContingencyTable":
        x = np.asarray(first, dtype=bool)
        y = np.asarray(second, dtype=bool)
        if x.shape != y.shape:
            raise ValueError("correctness vectors must have equal length")
        return cls(int(np.sum(x & y)), int(np.sum(x & ~y)), int(np.sum(~x & y)), int(np.sum(~x & ~y)))


@dataclass(frozen=True)
class McNemarResult:
    statistic: float
    p_value: float
    method: str  # "exact", "chi2" or "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def mcnemar(table: ContingencyTable, exact_limit: int = EXACT_MCNEMAR_LIMIT) -> McNemarResult:
    """Exact two-sided binomial test when b + c < ``exact_limit``, otherwise
    chi-square with continuity correction on one degree of freedom."""
    b, c = table.b, table.c
    n = b + c
    if n == 0:
        return McNemarResult(0.0, 1.0, "degenerate")
    if n < exact_limit:
        k = min(b, c)
        p = min(1.0, 2.0 * float(sps.binom.cdf(k, n, 0.5)))
        return McNemarResult(float(k), p, "exact")
    stat = (abs(b - c) - 1.0) ** 2 / n
    return McNemarResult(stat, float(sps.chi2.sf(stat, 1)), "chi2")


def mcnemar_chi2(table: ContingencyTable) -> McNemarResult:
    """Continuity-corrected chi-square regardless of table size."""
    return mcnemar(table, exact_limit=0) if table.b + table.c else McNemarResult(0.0, 1.0, "degenerate")


def mcnemar_exact(table: ContingencyTable) -> McNemarResult:
    return mcnemar(table, exact_limit=10**9)


def confidence_summary(conf_a, conf_b, correct_a, correct_b) -> dict:
    """Mean true-class confidence of two models over samples both got right."""
    ca, cb = np.asarray(correct_a, bool), np.asarray(correct_b, bool)
    both = ca & cb
    if not np.any(both):
        return {"count": 0, "mean_a": float("nan"), "mean_b": float("nan")}
    return {
        "count": int(both.sum()),
        "mean_a": float(np.mean(np.asarray(conf_a)[both])),
        "mean_b": float(np.mean(np.asarray(conf_b)[both])),
    }
