"""Truncated-normal inference for fitted splits and regions.

All probability mass is accumulated in log space from upper-tail
differences, so supports sitting dozens of standard deviations into a
tail still normalize correctly.  Confidence limits invert the truncated
CDF in its mean parameter by bracketed bisection (the CDF is monotone
in the mean).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .cart import Tree
from .contrast import Contrast, region_contrast, sibling_contrast
from .dataset import Dataset
from .intervals import IntervalSet
from .truncation import region_selection_set, sibling_selection_set

ENDPOINT_RTOL = 1e-9
CI_BRACKET_SDS = 50.0
CI_MAX_ITER = 200


class DegenerateTruncationError(ValueError):
    """The conditioning set carries no probability mass."""


class StatisticOutsideSupportError(ValueError):
    """The observed statistic is not in its own conditioning set, which
    indicates an inconsistent pipeline upstream."""


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    sd: float
    support: IntervalSet

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ValueError("sd must be positive and finite")
        if self.support.is_empty:
            raise DegenerateTruncationError("empty support")
        if all(iv.width == 0 for iv in self.support.intervals):
            raise DegenerateTruncationError("support has measure zero")


def _logsumexp(arr: np.ndarray) -> float:
    """Plain log-sum-exp on a small 1-d array; -inf entries allowed."""
    if arr.size == 0:
        return -np.inf
    m = float(np.max(arr))
    if m == -np.inf:
        return -np.inf
    return m + math.log(float(np.sum(np.exp(arr - m))))


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, elementwise, stable near both ends."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    small = x < -math.log(2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[small] = np.log1p(-np.exp(x[small]))
        mid = ~small & (x < 0)
        out[mid] = np.log(-np.expm1(x[mid]))
    return out


def _log_gauss_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log P(a < Z <= b) for standard normal Z, elementwise, stable in
    both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.full(a.shape, -np.inf)
    ok = a < b
    left = ok & (b <= 0)
    right = ok & (a >= 0)
    mid = ok & ~left & ~right
    if left.any():
        la, lb = log_ndtr(a[left]), log_ndtr(b[left])
        out[left] = lb + _log1mexp(la - lb)
    if right.any():
        la, lb = log_ndtr(-b[right]), log_ndtr(-a[right])
        out[right] = lb + _log1mexp(la - lb)
    if mid.any():
        s = np.logaddexp(log_ndtr(a[mid]), log_ndtr(-b[mid]))
        out[mid] = _log1mexp(np.minimum(s, 0.0))
    return out


def _support_arrays(support: IntervalSet) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([iv.lo for iv in support.intervals])
    hi = np.array([iv.hi for iv in support.intervals])
    return lo, hi


def _standardized_support(tn: TruncatedNormal) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = _support_arrays(tn.support)
    return (lo - tn.mean) / tn.sd, (hi - tn.mean) / tn.sd


def _log_total_mass(a: np.ndarray, b: np.ndarray) -> float:
    total = _logsumexp(_log_gauss_mass(a, b))
    if total == -np.inf:
        raise DegenerateTruncationError("support mass underflows to zero")
    return total


def _cdf_standardized(z: float, a: np.ndarray, b: np.ndarray) -> float:
    total = _log_total_mass(a, b)
    below = _log_gauss_mass(a, np.minimum(b, z))
    val = math.exp(_logsumexp(below) - total)
    return min(max(val, 0.0), 1.0)


def tn_cdf(x: float, tn: TruncatedNormal) -> float:
    """CDF of the truncated normal at x."""
    a, b = _standardized_support(tn)
    return _cdf_standardized((x - tn.mean) / tn.sd, a, b)


def _two_sided_tail(tn: TruncatedNormal, center: float, radius: float) -> float:
    """P(|X - center| >= radius) under the truncated normal."""
    a, b = _standardized_support(tn)
    zu = (center + radius - tn.mean) / tn.sd
    zl = (center - radius - tn.mean) / tn.sd
    total = _log_total_mass(a, b)
    upper = _log_gauss_mass(np.maximum(a, zu), b)
    lower = _log_gauss_mass(a, np.minimum(b, zl))
    val = math.exp(_logsumexp(np.concatenate([upper, lower])) - total)
    return min(max(val, 0.0), 1.0)


def _require_in_support(stat: float, support: IntervalSet, sd: float) -> None:
    if support.contains(stat):
        return
    tol = ENDPOINT_RTOL * max(1.0, abs(stat), sd)
    for e in support.endpoints():
        if abs(stat - e) <= tol:
            return
    raise StatisticOutsideSupportError(
        f"statistic {stat} lies outside its conditioning set {support}"
    )


def p_sibling(stat: float, tn_null: TruncatedNormal) -> float:
    """Two-sided truncated tail probability for a difference in sibling
    means; the null distribution is centered at zero."""
    _require_in_support(stat, tn_null.support, tn_null.sd)
    return _two_sided_tail(tn_null, tn_null.mean, abs(stat - tn_null.mean))


def p_region(stat: float, c: float, tn_null: TruncatedNormal) -> float:
    """Two-sided truncated tail probability for a region mean against the
    null value c."""
    if abs(tn_null.mean - c) > 1e-12 * max(1.0, abs(c)):
        raise ValueError("null distribution must be centered at the null value")
    _require_in_support(stat, tn_null.support, tn_null.sd)
    return _two_sided_tail(tn_null, c, abs(stat - c))


def selective_ci(
    stat: float, sd: float, support: IntervalSet, alpha: float
) -> tuple[float, float]:
    """Equal-tailed interval from inverting the truncated CDF in its mean.

    An endpoint whose defining equation cannot be bracketed within
    ``CI_BRACKET_SDS`` standard deviations of the statistic is reported
    as infinite (this genuinely happens when the statistic sits on the
    boundary of its conditioning set).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if not (sd > 0 and math.isfinite(sd)):
        raise ValueError("sd must be positive and finite")
    if support.is_empty or all(iv.width == 0 for iv in support.intervals):
        raise DegenerateTruncationError("support has measure zero")
    _require_in_support(stat, support, sd)
    los, his = _support_arrays(support)

    def cdf_at(m: float) -> float:
        return _cdf_standardized((stat - m) / sd, (los - m) / sd, (his - m) / sd)

    lo = _invert_mean(cdf_at, 1.0 - alpha / 2, stat, sd)
    hi = _invert_mean(cdf_at, alpha / 2, stat, sd)
    if lo > hi:  # can only happen through root-finding noise at tiny widths
        lo = hi = 0.5 * (lo + hi)
    return lo, hi


def _invert_mean(cdf_at, target: float, stat: float, sd: float) -> float:
    """Solve cdf_at(m) = target for m, where cdf_at is decreasing in m.

    Brackets by doubling steps away from the statistic; a side that
    cannot be bracketed within the expansion budget yields an infinite
    endpoint."""
    a = stat
    step = sd
    fa = cdf_at(a)
    while fa < target:
        if stat - a >= CI_BRACKET_SDS * sd:
            return -math.inf
        a -= step
        step *= 2.0
        fa = cdf_at(a)
    b = stat
    step = sd
    fb = cdf_at(b)
    while fb > target:
        if b - stat >= CI_BRACKET_SDS * sd:
            return math.inf
        b += step
        step *= 2.0
        fb = cdf_at(b)
    for _ in range(CI_MAX_ITER):
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        fm = cdf_at(m)
        if abs(fm - target) <= 1e-9:
            return m
        if fm >= target:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def estimate_sigma(y: np.ndarray) -> float:
    """Plug-in noise scale: sample standard deviation with n-1 denominator.

    The selective guarantees assume the noise scale is known; treat this
    as a practical stand-in, not part of the theory."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ValueError("need at least two observations")
    s = float(np.std(y, ddof=1))
    if s == 0.0:
        raise ValueError("response is constant; noise scale cannot be estimated")
    return s


def naive_z(stat: float, sd: float, alpha: float = 0.05) -> tuple[float, float, float]:
    """Classical two-sided z test and interval, ignoring selection."""
    if sd <= 0:
        raise ValueError("sd must be positive")
    p = 2.0 * float(ndtr(-abs(stat) / sd))
    z = float(ndtri(1.0 - alpha / 2.0))
    return min(max(p, 0.0), 1.0), stat - z * sd, stat + z * sd


# ---------------------------------------------------------------------------
# Tree-level drivers


@dataclass(frozen=True)
class InferenceResult:
    kind: str  # "sibling" or "region"
    region_ids: tuple[int, ...]
    level: int
    statistic: float
    null_value: float
    p_value: float
    ci_lo: float
    ci_hi: float
    alpha: float
    sigma: float
    sigma_estimated: bool
    support: IntervalSet

    def to_json(self) -> dict:
        def enc(v):
            if v == math.inf:
                return "inf"
            if v == -math.inf:
                return "-inf"
            return v

        return {
            "kind": self.kind,
            "region_ids": list(self.region_ids),
            "level": self.level,
            "statistic": self.statistic,
            "null_value": self.null_value,
            "p_value": self.p_value,
            "ci_lo": enc(self.ci_lo),
            "ci_hi": enc(self.ci_hi),
            "alpha": self.alpha,
            "sigma": self.sigma,
            "sigma_source": "estimated" if self.sigma_estimated else "given",
            "truncation_set": self.support.to_json(),
        }


def _tree_lambda(tree: Tree) -> float:
    return 0.0 if tree.lam is None else float(tree.lam)


def split_inference(
    d: Dataset,
    tree: Tree,
    split_id: int,
    sigma: float,
    alpha: float = 0.05,
    y: np.ndarray | None = None,
    sigma_estimated: bool = False,
    method: str = "auto",
) -> InferenceResult:
    """Test the difference in mean response between the two children of an
    internal region, conditioning on that split having been selected."""
    r = tree.region(split_id)
    if r.children is None:
        raise ValueError(f"region {split_id} is terminal; it has no split to test")
    y = np.asarray(y, dtype=np.float64) if y is not None else d.y
    ca, cb = r.children
    nu = sibling_contrast(tree.region(ca).members, tree.region(cb).members, d.n, (ca, cb))
    support = sibling_selection_set(d, tree, ca, cb, _tree_lambda(tree), y=y, method=method)
    stat = nu.dot(y)
    sd = sigma * math.sqrt(nu.norm_sq)
    tn = TruncatedNormal(0.0, sd, support)
    p = p_sibling(stat, tn)
    lo, hi = selective_ci(stat, sd, support, alpha)
    return InferenceResult(
        "sibling", (ca, cb), r.level + 1, stat, 0.0, p, lo, hi, alpha, sigma, sigma_estimated, support
    )


def region_inference(
    d: Dataset,
    tree: Tree,
    region_id: int,
    sigma: float,
    alpha: float = 0.05,
    null_value: float = 0.0,
    mode: str = "identity",
    budget: int | None = None,
    y: np.ndarray | None = None,
    sigma_estimated: bool = False,
    method: str = "auto",
) -> InferenceResult:
    """Test and cover the mean response of one region, conditioning on the
    region having been selected."""
    r = tree.region(region_id)
    y = np.asarray(y, dtype=np.float64) if y is not None else d.y
    nu = region_contrast(r.members, d.n, region_id)
    support = region_selection_set(
        d, tree, region_id, _tree_lambda(tree), y=y, mode=mode, budget=budget, method=method
    )
    stat = nu.dot(y)
    sd = sigma * math.sqrt(nu.norm_sq)
    tn = TruncatedNormal(null_value, sd, support)
    p = p_region(stat, null_value, tn)
    lo, hi = selective_ci(stat, sd, support, alpha)
    return InferenceResult(
        "region", (region_id,), r.level, stat, null_value, p, lo, hi, alpha, sigma,
        sigma_estimated, support,
    )


def analyze_tree(
    d: Dataset,
    tree: Tree,
    sigma: float,
    alpha: float = 0.05,
    mode: str = "identity",
    budget: int | None = None,
    null_value: float = 0.0,
    y: np.ndarray | None = None,
    sigma_estimated: bool = False,
) -> list[InferenceResult]:
    """Every split's difference test plus every region's mean interval."""
    out = []
    for rid in sorted(tree.internal_ids()):
        out.append(
            split_inference(d, tree, rid, sigma, alpha, y=y, sigma_estimated=sigma_estimated)
        )
    for rid in sorted(tree.regions):
        out.append(
            region_inference(
                d, tree, rid, sigma, alpha, null_value=null_value, mode=mode, budget=budget,
                y=y, sigma_estimated=sigma_estimated,
            )
        )
    return out
