"""Desk-scale simulation studies: null uniformity of the selective test,
power with adjusted-Rand split matching, and interval coverage.

Each replicate draws its own independent random stream from one spawned
seed sequence, so runs are bit-reproducible regardless of worker count,
and study outputs reduce by counting (order-independent).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import kstwo

from .cart import StoppingRule, fit_cart, region_bounds
from .contrast import region_contrast, sibling_contrast
from .dataset import Dataset
from .inference import TruncatedNormal, naive_z, p_sibling, selective_ci
from .truncation import region_selection_set, sibling_selection_set


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    p: int = 5
    a: float = 1.0
    b: float = 5.0
    sigma: float = 5.0
    lam: float = 5.0
    stopping: StoppingRule = field(default_factory=StoppingRule)
    replicates: int = 300
    seed: int = 0
    methods: tuple[str, ...] = ("selective", "naive", "split")

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if (self.a != 0 or self.b != 0) and self.p < 3:
            raise ValueError("the signal pattern uses the first three covariates; need p >= 3")


def generate(cfg: SimConfig, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    """Standard-normal design and the three-level signal pattern: a base
    bump on x1 <= 0, amplified on x2 > 0, plus a same-sign x2*x3 bonus."""
    X = rng.standard_normal((cfg.n, cfg.p))
    if cfg.a == 0 and cfg.b == 0:
        mu = np.zeros(cfg.n)
    else:
        x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
        mu = cfg.b * (x1 <= 0) * (1.0 + cfg.a * (x2 > 0) + ((x3 * x2) > 0))
    y = mu + cfg.sigma * rng.standard_normal(cfg.n)
    return Dataset.from_arrays(X, y), mu


def replicate_streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def _pool_map(fn, payloads):
    threads = int(os.environ.get("TREEVAL_THREADS", "1") or "1")
    if threads <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, payloads, chunksize=max(1, len(payloads) // (4 * threads))))


# ---------------------------------------------------------------------------
# Adjusted Rand index on a split-vs-split contingency table


def _comb2(x):
    return x * (x - 1.0) / 2.0


def adjusted_rand(table) -> float:
    """Chance-corrected agreement between the row and column partitions of
    a contingency table (rows: true split sides; columns: estimated)."""
    t = np.asarray(table, dtype=np.float64)
    total = t.sum()
    if total <= 0:
        raise ValueError("contingency table is empty")
    index = _comb2(t).sum()
    rows = _comb2(t.sum(axis=1)).sum()
    cols = _comb2(t.sum(axis=0)).sum()
    pairs = _comb2(total)
    expected = rows * cols / pairs if pairs > 0 else 0.0
    denom = 0.5 * (rows + cols) - expected
    if denom == 0.0:
        # Degenerate (e.g. one cell holds everything): agree exactly or not at all.
        row_support = (t > 0).sum(axis=1)
        col_support = (t > 0).sum(axis=0)
        identical = np.all(row_support <= 1) and np.all(col_support <= 1)
        return 1.0 if identical else 0.0
    return float((index - expected) / denom)


def split_contingency(true_left, true_right, est_left, est_right, n: int) -> np.ndarray:
    """2x3 table: true split side (rows) against estimated split side or
    uninvolved (columns)."""
    est_l = np.zeros(n, dtype=bool)
    est_l[est_left] = True
    est_r = np.zeros(n, dtype=bool)
    est_r[est_right] = True
    neither = ~(est_l | est_r)
    out = np.zeros((2, 3))
    for i, side in enumerate((true_left, true_right)):
        out[i, 0] = est_l[side].sum()
        out[i, 1] = est_r[side].sum()
        out[i, 2] = neither[side].sum()
    return out


def ks_distance(pvals) -> float:
    u = np.sort(np.asarray(pvals, dtype=np.float64))
    n = u.size
    if n == 0:
        raise ValueError("no p-values to test")
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - u, u - (i - 1) / n)))


def ks_critical(n: int, alpha: float = 0.01) -> float:
    return float(kstwo.isf(alpha, n))


# ---------------------------------------------------------------------------
# True splits of the signal pattern


def true_splits(X: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(level, left indices, right indices) for each split of the signal
    tree; splits whose sides are empty in this draw are omitted."""
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    groups = [
        (1, x1 <= 0, x1 > 0),
        (2, (x1 <= 0) & (x2 > 0), (x1 <= 0) & (x2 <= 0)),
        (3, (x1 <= 0) & (x2 > 0) & (x3 > 0), (x1 <= 0) & (x2 > 0) & (x3 <= 0)),
        (3, (x1 <= 0) & (x2 <= 0) & (x3 < 0), (x1 <= 0) & (x2 <= 0) & (x3 >= 0)),
    ]
    out = []
    for level, l_mask, r_mask in groups:
        left, right = np.flatnonzero(l_mask), np.flatnonzero(r_mask)
        if left.size and right.size:
            out.append((level, left, right))
    return out


def box_members(X: np.ndarray, bounds) -> np.ndarray:
    """Rows of X inside a cell given as per-feature (open lo, closed hi]."""
    keep = np.ones(X.shape[0], dtype=bool)
    for j, (lo, hi) in enumerate(bounds):
        if lo != -math.inf:
            keep &= X[:, j] > lo
        if hi != math.inf:
            keep &= X[:, j] <= hi
    return np.flatnonzero(keep)


# ---------------------------------------------------------------------------
# Null uniformity study


@dataclass
class NullStudyResult:
    p_selective: np.ndarray
    p_naive: np.ndarray
    levels: np.ndarray
    ks_selective: float
    ks_naive: float
    ks_critical_1pct: float
    replicates: int
    seed: int

    def summary(self) -> dict:
        return {
            "study": "null",
            "replicates": self.replicates,
            "seed": self.seed,
            "n_splits": int(self.p_selective.size),
            "ks_selective": self.ks_selective,
            "ks_naive": self.ks_naive,
            "ks_critical_1pct": self.ks_critical_1pct,
            "selective_uniform": bool(self.ks_selective < self.ks_critical_1pct),
            "naive_uniform": bool(self.ks_naive < self.ks_critical_1pct),
        }

    def rows(self):
        for i in range(self.p_selective.size):
            yield {
                "level": int(self.levels[i]),
                "p_selective": float(self.p_selective[i]),
                "p_naive": float(self.p_naive[i]),
            }


def _null_replicate(payload) -> list[tuple[int, float, float]]:
    cfg, seed_seq = payload
    rng = np.random.Generator(np.random.Philox(seed_seq))
    d, _ = generate(cfg, rng)
    _, tree = fit_cart(d, d.y, cfg.stopping, cfg.lam)
    out = []
    for rid in sorted(tree.internal_ids()):
        ca, cb = tree.region(rid).children
        nu = sibling_contrast(tree.region(ca).members, tree.region(cb).members, d.n)
        stat = nu.dot(d.y)
        sd = cfg.sigma * math.sqrt(nu.norm_sq)
        support = sibling_selection_set(d, tree, ca, cb, cfg.lam)
        p_sel = p_sibling(stat, TruncatedNormal(0.0, sd, support))
        p_nai = naive_z(stat, sd)[0]
        out.append((tree.region(rid).level + 1, p_sel, p_nai))
    return out


def run_null_study(cfg: SimConfig) -> NullStudyResult:
    if cfg.a != 0 or cfg.b != 0:
        raise ValueError("the null study requires a = b = 0")
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    rows = _pool_map(_null_replicate, [(cfg, s) for s in seqs])
    flat = [r for rep in rows for r in rep]
    levels = np.array([r[0] for r in flat], dtype=int)
    p_sel = np.array([r[1] for r in flat])
    p_nai = np.array([r[2] for r in flat])
    return NullStudyResult(
        p_sel, p_nai, levels,
        ks_distance(p_sel), ks_distance(p_nai), ks_critical(p_sel.size),
        cfg.replicates, cfg.seed,
    )


def write_qq(path, pvals, levels) -> None:
    """Gnuplot-friendly QQ dump: one block per level, blank-line separated."""
    pvals = np.asarray(pvals)
    levels = np.asarray(levels)
    with open(path, "w") as fh:
        for lv in np.unique(levels):
            u = np.sort(pvals[levels == lv])
            n = u.size
            fh.write(f"# level {lv} ({n} p-values)\n")
            for i, v in enumerate(u, start=1):
                fh.write(f"{(i - 0.5) / n:.8f} {v:.8f}\n")
            fh.write("\n\n")


# ---------------------------------------------------------------------------
# Sample splitting


def sample_split_tree(d: Dataset, cfg: SimConfig, rng: np.random.Generator):
    """Fit a tree on a random half; report its regions geometrically so
    they can be evaluated on the full design, plus the held-out rows."""
    perm = rng.permutation(d.n)
    half = d.n // 2
    train = np.sort(perm[:half])
    test = np.sort(perm[half:])
    d_train = Dataset.from_arrays(d.X[train], d.y[train])
    _, tree = fit_cart(d_train, d_train.y, cfg.stopping, cfg.lam)
    return tree, d_train, train, test


def split_method_tests(d: Dataset, cfg: SimConfig, rng: np.random.Generator, alpha: float = 0.05):
    """Naive tests on the held-out half for every split of a half-sample
    tree: (level, full-sample left/right members, test stat, p, ci)."""
    tree, d_train, train, test = sample_split_tree(d, cfg, rng)
    test_mask = np.zeros(d.n, dtype=bool)
    test_mask[test] = True
    out = []
    for rid in sorted(tree.internal_ids()):
        r = tree.region(rid)
        ca, cb = r.children
        left = box_members(d.X, region_bounds(d_train, tree.region(ca).path))
        right = box_members(d.X, region_bounds(d_train, tree.region(cb).path))
        tl = left[test_mask[left]]
        tr = right[test_mask[right]]
        if tl.size == 0 or tr.size == 0:
            out.append((r.level + 1, left, right, math.nan, 1.0, (math.nan, math.nan)))
            continue
        stat = float(d.y[tl].mean() - d.y[tr].mean())
        sd = cfg.sigma * math.sqrt(1.0 / tl.size + 1.0 / tr.size)
        p, lo, hi = naive_z(stat, sd, alpha)
        out.append((r.level + 1, left, right, stat, p, (lo, hi)))
    return out, tree, d_train, test_mask


# ---------------------------------------------------------------------------
# Power study


@dataclass
class PowerStudyResult:
    counts: dict  # (method, level) -> [instances, detected, rejected]
    skipped_true_splits: int
    seed: int

    def rates(self) -> dict:
        out = {}
        for (method, level), (n, det, rej) in sorted(self.counts.items()):
            out[f"{method}/level{level}"] = {
                "instances": n,
                "detection_rate": det / n if n else math.nan,
                "rejection_rate": rej / n if n else math.nan,
            }
        return out

    def summary(self) -> dict:
        return {"study": "power", "seed": self.seed, "skipped_true_splits": self.skipped_true_splits, "rates": self.rates()}

    def rows(self):
        for (method, level), (n, det, rej) in sorted(self.counts.items()):
            yield {
                "method": method,
                "level": level,
                "instances": n,
                "detected": det,
                "rejected": rej,
            }


def _match_and_test(d, cfg, truth, est_splits, p_of):
    """Best adjusted-Rand match of every true split among the estimated
    ones, with the matched split's p-value."""
    results = []
    for level, t_left, t_right in truth:
        best_ari, best_idx = -math.inf, None
        for idx, (_, e_left, e_right) in enumerate(est_splits):
            tab = split_contingency(t_left, t_right, e_left, e_right, d.n)
            ari = adjusted_rand(tab)
            if ari > best_ari:
                best_ari, best_idx = ari, idx
        detected = best_idx is not None and best_ari > 0.75
        rejected = bool(detected and p_of(best_idx) < 0.05)
        results.append((level, detected, rejected))
    return results


def _power_replicate(payload):
    cfg, seed_seq = payload
    rng = np.random.Generator(np.random.Philox(seed_seq))
    d, mu = generate(cfg, rng)
    truth = true_splits(d.X)
    skipped = 4 - len(truth)
    counts: dict = {}

    def bump(method, level, detected, rejected):
        c = counts.setdefault((method, level), [0, 0, 0])
        c[0] += 1
        c[1] += int(detected)
        c[2] += int(rejected)

    # Full-data tree with selective tests.
    _, tree = fit_cart(d, d.y, cfg.stopping, cfg.lam)
    est = []
    for rid in sorted(tree.internal_ids()):
        ca, cb = tree.region(rid).children
        est.append((rid, tree.region(ca).members, tree.region(cb).members))
    pcache: dict = {}

    def p_selective(idx):
        if idx not in pcache:
            rid, ml, mr = est[idx]
            ca, cb = tree.region(rid).children
            nu = sibling_contrast(ml, mr, d.n)
            stat = nu.dot(d.y)
            sd = cfg.sigma * math.sqrt(nu.norm_sq)
            support = sibling_selection_set(d, tree, ca, cb, cfg.lam)
            pcache[idx] = p_sibling(stat, TruncatedNormal(0.0, sd, support))
        return pcache[idx]

    if est:
        for level, detected, rejected in _match_and_test(d, cfg, truth, est, p_selective):
            bump("selective", level, detected, rejected)
    else:
        for level, _, _ in truth:
            bump("selective", level, False, False)

    # Half-sample tree with naive tests on the held-out half.
    ss = split_method_tests(d, cfg, rng)[0]
    est_ss = [(i, left, right) for i, (_, left, right, _, _, _) in enumerate(ss)]
    if est_ss:
        for level, detected, rejected in _match_and_test(d, cfg, truth, est_ss, lambda i: ss[i][4]):
            bump("split", level, detected, rejected)
    else:
        for level, _, _ in truth:
            bump("split", level, False, False)
    return counts, skipped


def run_power_study(cfg: SimConfig, a_values, b_values) -> PowerStudyResult:
    payloads = []
    cells = [(a, b) for a in a_values for b in b_values]
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(cells) * cfg.replicates)
    k = 0
    for a, b in cells:
        cell_cfg = replace(cfg, a=a, b=b)
        for _ in range(cfg.replicates):
            payloads.append((cell_cfg, seqs[k]))
            k += 1
    results = _pool_map(_power_replicate, payloads)
    counts: dict = {}
    skipped = 0
    for c, s in results:
        skipped += s
        for key, (n, det, rej) in c.items():
            tot = counts.setdefault(key, [0, 0, 0])
            tot[0] += n
            tot[1] += det
            tot[2] += rej
    return PowerStudyResult(counts, skipped, cfg.seed)


# ---------------------------------------------------------------------------
# Coverage study


@dataclass
class CoverageStudyResult:
    counts: dict  # (kind, level, method) -> [covered, total]
    seed: int

    def proportions(self) -> dict:
        out = {}
        for (kind, level, method), (cov, tot) in sorted(self.counts.items()):
            out[f"{kind}/level{level}/{method}"] = {
                "intervals": tot,
                "coverage": cov / tot if tot else math.nan,
            }
        return out

    def summary(self) -> dict:
        return {"study": "coverage", "seed": self.seed, "proportions": self.proportions()}

    def rows(self):
        for (kind, level, method), (cov, tot) in sorted(self.counts.items()):
            yield {"kind": kind, "level": level, "method": method, "covered": cov, "total": tot}


def _covers(lo, hi, target) -> bool:
    return bool(lo <= target <= hi)


def _coverage_replicate(payload):
    cfg, alpha, seed_seq = payload
    rng = np.random.Generator(np.random.Philox(seed_seq))
    d, mu = generate(cfg, rng)
    counts: dict = {}

    def bump(kind, level, method, covered):
        c = counts.setdefault((kind, level, method), [0, 0])
        c[0] += int(covered)
        c[1] += 1

    _, tree = fit_cart(d, d.y, cfg.stopping, cfg.lam)
    for rid in sorted(tree.internal_ids()):
        r = tree.region(rid)
        ca, cb = r.children
        nu = sibling_contrast(tree.region(ca).members, tree.region(cb).members, d.n)
        target = nu.dot(mu)
        stat = nu.dot(d.y)
        sd = cfg.sigma * math.sqrt(nu.norm_sq)
        level = r.level + 1
        if "selective" in cfg.methods:
            support = sibling_selection_set(d, tree, ca, cb, cfg.lam)
            lo, hi = selective_ci(stat, sd, support, alpha)
            bump("sibling", level, "selective", _covers(lo, hi, target))
        if "naive" in cfg.methods:
            _, lo, hi = naive_z(stat, sd, alpha)
            bump("sibling", level, "naive", _covers(lo, hi, target))
    for rid in sorted(tree.regions):
        r = tree.region(rid)
        if r.parent is None:
            continue
        nu = region_contrast(r.members, d.n, rid)
        target = nu.dot(mu)
        stat = nu.dot(d.y)
        sd = cfg.sigma * math.sqrt(nu.norm_sq)
        if "selective" in cfg.methods:
            support = region_selection_set(d, tree, rid, cfg.lam)
            lo, hi = selective_ci(stat, sd, support, alpha)
            bump("region", r.level, "selective", _covers(lo, hi, target))
        if "naive" in cfg.methods:
            _, lo, hi = naive_z(stat, sd, alpha)
            bump("region", r.level, "naive", _covers(lo, hi, target))

    if "split" in cfg.methods:
        ss, sstree, d_train, test_mask = split_method_tests(d, cfg, rng, alpha)
        for level, left, right, stat, p, (lo, hi) in ss:
            nu = sibling_contrast(left, right, d.n)
            target = nu.dot(mu)
            covered = False if math.isnan(stat) else _covers(lo, hi, target)
            bump("sibling", level, "split", covered)
        for rid in sorted(sstree.regions):
            r = sstree.region(rid)
            if r.parent is None:
                continue
            members = box_members(d.X, region_bounds(d_train, r.path))
            if members.size == 0:
                continue
            nu = region_contrast(members, d.n, rid)
            target = nu.dot(mu)
            tmem = members[test_mask[members]]
            if tmem.size == 0:
                bump("region", r.level, "split", False)
                continue
            stat = float(d.y[tmem].mean())
            sd = cfg.sigma / math.sqrt(tmem.size)
            _, lo, hi = naive_z(stat, sd, alpha)
            bump("region", r.level, "split", _covers(lo, hi, target))
    return counts


def run_coverage_study(cfg: SimConfig, a_values, b_values, alpha: float = 0.05) -> CoverageStudyResult:
    payloads = []
    cells = [(a, b) for a in a_values for b in b_values]
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(cells) * cfg.replicates)
    k = 0
    for a, b in cells:
        cell_cfg = replace(cfg, a=a, b=b)
        for _ in range(cfg.replicates):
            payloads.append((cell_cfg, alpha, seqs[k]))
            k += 1
    results = _pool_map(_coverage_replicate, payloads)
    counts: dict = {}
    for c in results:
        for key, (cov, tot) in c.items():
            agg = counts.setdefault(key, [0, 0])
            agg[0] += cov
            agg[1] += tot
    return CoverageStudyResult(counts, cfg.seed)


def write_rows_csv(path, rows) -> None:
    import csv as _csv

    rows = list(rows)
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    with open(path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
