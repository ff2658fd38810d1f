"""Conditioning sets: for which statistic values does refitting the tree
reproduce the selected split or region?

Along the perturbation line, every competing split's gain is a quadratic
in the statistic, so the event "the fitted split beats competitor (j, s)
at level l" is a quadratic inequality.  The growth event intersects all
of them; the pruning event adds one quadratic per ancestor level,
anchored on a reference tree that is the same for every point of the
growth set.  Coefficients for a whole feature are produced by one
prefix-sum pass over its sorted order, so a full set costs
O(n p L + n p log n).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cart import (
    StoppingRule,
    Tree,
    bottom_up_ordering,
    grow,
    n_terminal,
    prune,
    subtree_gain,
)
from .contrast import Contrast, orthogonal_part, perturbed_response, region_contrast, sibling_contrast
from .dataset import Dataset
from .intervals import (
    KIND_EMPTY,
    KIND_FULL,
    KIND_SPAN,
    KIND_SPLIT,
    IntervalSet,
    intersect_solutions,
    solution_to_interval_set,
    solve_quadratic_batch,
    union_all,
)

# Difference coefficients below this fraction of the underlying gain
# coefficients are rounding dust: snapped to exact zero before solving.
# Competing splits whose whole difference snaps to zero are duplicates
# (same partition of the parent's members).
SNAP_RTOL = 1e-12

FULL_PERMUTATION_LIMIT = 8


class ConditionViolation(ValueError):
    """The branch/contrast pair does not have the two-constant shift
    structure the coefficient streaming relies on."""


class ChainNotRealized(RuntimeError):
    """A refit failed to reproduce the branch it was meant to anchor."""


@dataclass(frozen=True)
class Branch:
    """Ordered (feature, rank, side) triples from the root."""

    triples: tuple[tuple[int, int, int], ...]

    @property
    def length(self) -> int:
        return len(self.triples)

    def permuted(self, perm) -> "Branch":
        return Branch(tuple(self.triples[i] for i in perm))


def branch_of(tree: Tree, region_id: int) -> Branch:
    return Branch(tuple(tree.region(region_id).path))


def branch_member_chain(d: Dataset, branch: Branch) -> list[np.ndarray]:
    """Member index sets of the nested regions the branch induces,
    starting with the full sample."""
    chain = [np.arange(d.n)]
    for j, s, e in branch.triples:
        thr = d.order_statistic(j, s)
        cur = chain[-1]
        vals = d.X[cur, j]
        chain.append(cur[vals <= thr] if e == 1 else cur[vals > thr])
    return chain


@dataclass(frozen=True, eq=False)
class _LevelTable:
    parent_members: np.ndarray
    triple: tuple[int, int, int]
    fit_abc: tuple[float, float, float]
    ranks: list[np.ndarray]  # per feature, admissible 1-based ranks
    a: list[np.ndarray]
    b: list[np.ndarray]
    c: list[np.ndarray]


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Per-level quadratic gain coefficients along the perturbation line."""

    branch: Branch
    stat: float
    norm_sq: float
    levels: list[_LevelTable]
    chain: list[np.ndarray]
    feasible: bool
    reason: str | None = None

    def level_rows(self, level: int):
        """Diagnostic iterator of (feature, rank, a, b, c) at one level."""
        t = self.levels[level - 1]
        for j, ranks in enumerate(t.ranks):
            for i, s in enumerate(ranks):
                yield j, int(s), float(t.a[j][i]), float(t.b[j][i]), float(t.c[j][i])


def _infeasible(branch, stat, norm_sq, reason) -> CoefficientTable:
    return CoefficientTable(branch, stat, norm_sq, [], [], False, reason)


def _check_condition(d, y, nu, chain, branch):
    """The perturbation must shift the branch's deepest region and its
    sibling by constants and leave everything else untouched."""
    if branch.length == 0:
        return
    y1 = perturbed_response(nu.dot(y) + 1.0, nu, y)
    delta = y1 - y
    inner = chain[-1]
    j, s, e = branch.triples[-1]
    parent = chain[-2]
    thr = d.order_statistic(j, s)
    vals = d.X[parent, j]
    sib = parent[vals > thr] if e == 1 else parent[vals <= thr]
    rest = np.setdiff1d(np.arange(d.n), np.concatenate([inner, sib]), assume_unique=False)
    tol = 1e-9 * (1.0 + float(np.max(np.abs(delta))))
    ok = (
        (inner.size == 0 or np.ptp(delta[inner]) <= tol)
        and (sib.size == 0 or np.ptp(delta[sib]) <= tol)
        and (rest.size == 0 or np.max(np.abs(delta[rest])) <= tol)
    )
    if not ok:
        raise ConditionViolation(
            "perturbation is not a two-constant shift on the branch tip and its sibling"
        )


def gain_coefficients(
    d: Dataset,
    y: np.ndarray,
    branch: Branch,
    nu: Contrast,
    min_node_size: int = 1,
    check_condition: bool = True,
) -> CoefficientTable:
    """Stream the quadratic gain coefficients of every admissible split
    at every level of the branch."""
    y = np.asarray(y, dtype=np.float64)
    stat = nu.dot(y)
    nsq = nu.norm_sq
    chain = branch_member_chain(d, branch)
    if any(c.size == 0 for c in chain):
        return _infeasible(branch, stat, nsq, "branch induces an empty region")
    if check_condition:
        _check_condition(d, y, nu, chain, branch)

    nu_dense = nu.dense()
    w = orthogonal_part(nu, y)
    levels: list[_LevelTable] = []
    for l, triple in enumerate(branch.triples, start=1):
        parent = chain[l - 1]
        m = parent.size
        if m < 2 * min_node_size:
            return _infeasible(branch, stat, nsq, f"level {l} parent too small to split")
        mask = np.zeros(d.n, dtype=bool)
        mask[parent] = True
        nu_r = float(nu_dense[parent].sum())
        w_r = float(w[parent].sum())
        ranks_per_j, a_per_j, b_per_j, c_per_j = [], [], [], []
        fit_abc = None
        j_fit, s_fit, _ = triple
        for j in range(d.p):
            ordj = d.sort_idx[j]
            sel = mask[ordj]
            cnt1 = np.cumsum(sel)[: d.n - 1]
            nu1 = np.cumsum(nu_dense[ordj] * sel)[: d.n - 1]
            w1 = np.cumsum(w[ordj] * sel)[: d.n - 1]
            adm = d.distinct_rank[j] & (cnt1 >= min_node_size) & (m - cnt1 >= min_node_size)
            idx = np.flatnonzero(adm)
            ranks = idx + 1
            n1 = cnt1[idx].astype(np.float64)
            n0 = m - n1
            v1, v0 = nu1[idx], nu_r - nu1[idx]
            u1, u0 = w1[idx], w_r - w1[idx]
            a = (v1 * v1 / n1 + v0 * v0 / n0 - nu_r * nu_r / m) / (nsq * nsq)
            b = 2.0 * (v1 * u1 / n1 + v0 * u0 / n0 - nu_r * w_r / m) / nsq
            c = u1 * u1 / n1 + u0 * u0 / n0 - w_r * w_r / m
            ranks_per_j.append(ranks)
            a_per_j.append(a)
            b_per_j.append(b)
            c_per_j.append(c)
            if j == j_fit:
                pos = np.searchsorted(ranks, s_fit)
                if pos >= ranks.size or ranks[pos] != s_fit:
                    return _infeasible(
                        branch, stat, nsq, f"fitted split (j={j_fit}, s={s_fit}) inadmissible at level {l}"
                    )
                fit_abc = (float(a[pos]), float(b[pos]), float(c[pos]))
        levels.append(_LevelTable(parent, triple, fit_abc, ranks_per_j, a_per_j, b_per_j, c_per_j))
    return CoefficientTable(branch, stat, nsq, levels, chain, True)


def _level_deltas(level: _LevelTable):
    """Snapped difference coefficients "competitor minus fitted" per
    feature, plus the duplicate mask (identical partitions)."""
    af, bf, cf = level.fit_abc
    fit_mag = max(abs(af), abs(bf), abs(cf))
    out = []
    for j, ranks in enumerate(level.ranks):
        ref = np.maximum.reduce([np.abs(level.a[j]), np.abs(level.b[j]), np.abs(level.c[j])])
        ref = np.maximum(ref, fit_mag)
        da = level.a[j] - af
        db = level.b[j] - bf
        dc = level.c[j] - cf
        for arr in (da, db, dc):
            arr[np.abs(arr) <= SNAP_RTOL * ref] = 0.0
        dup = (da == 0.0) & (db == 0.0) & (dc == 0.0)
        out.append((ranks, da, db, dc, dup))
    return out


def _level_constraint_arrays(level: _LevelTable, enforce_tie_rule: bool):
    """Difference quadratics "competitor gain - fitted gain <= 0" for one
    level.  Returns (kind, lo, hi) arrays or None when a lexicographically
    smaller competitor duplicates the fitted split (the deterministic tie
    rule then makes the branch unrealizable)."""
    j_fit, s_fit, _ = level.triple
    das, dbs, dcs = [], [], []
    for j, (ranks, da, db, dc, dup) in enumerate(_level_deltas(level)):
        keep = np.ones(ranks.size, dtype=bool)
        if j == j_fit:
            keep &= ranks != s_fit
        if enforce_tie_rule:
            smaller = (j < j_fit) | ((j == j_fit) & (ranks < s_fit))
            if np.any(dup & smaller & keep):
                return None
        das.append(da[keep])
        dbs.append(db[keep])
        dcs.append(dc[keep])
    da = np.concatenate(das) if das else np.zeros(0)
    db = np.concatenate(dbs) if dbs else np.zeros(0)
    dc = np.concatenate(dcs) if dcs else np.zeros(0)
    return solve_quadratic_batch(da, db, dc, sense="le")


def _growth_arrays(table: CoefficientTable, enforce_tie_rule: bool):
    out = []
    for level in table.levels:
        arrays = _level_constraint_arrays(level, enforce_tie_rule)
        if arrays is None:
            return None
        out.append(arrays)
    return out


def _concat_arrays(parts):
    kinds = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int8)
    los = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    his = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)
    return kinds, los, his


def _fast_reduce(level_arrays, pruning_arrays):
    """O(total constraints) reduction valid for a fitted sibling branch:
    shallow levels give one interval each, the deepest level and the
    pruning constraints give complement pairs straddling zero.  Returns
    None if any shape breaks the preconditions (caller falls back)."""
    span_lo, span_hi = -math.inf, math.inf
    reduced = []
    for depth, (kind, lo, hi) in enumerate(level_arrays, start=1):
        last = depth == len(level_arrays)
        if np.any(kind == KIND_EMPTY):
            return IntervalSet.empty()
        if not last:
            spans = kind == KIND_SPAN
            if not np.all(spans | (kind == KIND_FULL)):
                return None
            if np.any(spans):
                span_lo = max(span_lo, float(lo[spans].max()))
                span_hi = min(span_hi, float(hi[spans].min()))
        else:
            splits = kind == KIND_SPLIT
            if not np.all(splits | (kind == KIND_FULL)):
                return None
            if np.any(splits):
                l, h = lo[splits], hi[splits]
                if not (np.all(l <= 0.0) and np.all(h >= 0.0)):
                    return None
                reduced.append((KIND_SPLIT, float(l.min()), float(h.max())))
    for kind, lo, hi in pruning_arrays:
        if np.any(kind == KIND_EMPTY):
            return IntervalSet.empty()
        splits = kind == KIND_SPLIT
        if not np.all(splits | (kind == KIND_FULL)):
            return None
        if np.any(splits):
            l, h = lo[splits], hi[splits]
            if not (np.all(l <= 0.0) and np.all(h >= 0.0)):
                return None
            reduced.append((KIND_SPLIT, float(l.min()), float(h.max())))
    reduced.append((KIND_SPAN, span_lo, span_hi))
    kinds = np.array([r[0] for r in reduced], dtype=np.int8)
    los = np.array([r[1] for r in reduced])
    his = np.array([r[2] for r in reduced])
    return intersect_solutions(kinds, los, his)


def growth_set(
    d: Dataset,
    y: np.ndarray,
    branch: Branch,
    nu: Contrast,
    stop: StoppingRule,
    realized: bool = True,
    method: str = "auto",
) -> IntervalSet:
    """Statistic values for which the unpruned refit reproduces the branch."""
    if branch.length > stop.max_level:
        return IntervalSet.empty()
    table = gain_coefficients(d, y, branch, nu, stop.min_node_size)
    if not table.feasible:
        return IntervalSet.empty()
    arrays = _growth_arrays(table, enforce_tie_rule=not realized)
    if arrays is None:
        return IntervalSet.empty()
    if method in ("auto", "fast") and realized and nu.kind == "sibling":
        fast = _fast_reduce(arrays, [])
        if fast is not None:
            return fast
        if method == "fast":
            raise RuntimeError("fast path preconditions failed")
    return intersect_solutions(*_concat_arrays(arrays))


def _interior_point(s: IntervalSet, ref: float) -> float:
    """Midpoint of the widest interval, with unbounded ends clipped one
    unit beyond the reference statistic."""
    best, width = None, -math.inf
    for iv_ in s.intervals:
        lo, hi = iv_.lo, iv_.hi
        if math.isinf(lo):
            lo = min(hi if math.isfinite(hi) else ref, ref) - 1.0
        if math.isinf(hi):
            hi = max(lo, ref) + 1.0
        if hi - lo > width:
            width, best = hi - lo, 0.5 * (lo + hi)
    if best is None:
        raise ValueError("cannot pick a point from an empty set")
    return best


def pruning_reference(d, y, branch, nu, lam, stop, fitted=None, grow_region=None):
    """Reference tree for the pruning constraints plus the response and
    chain ids it was built on (the fitted tree when the branch is
    realized there; otherwise a fresh refit at an interior point of the
    growth set, pruned everywhere except along the branch)."""
    if fitted is not None:
        chain = fitted.walk_to(branch.triples)
        if chain is not None:
            return fitted, np.asarray(y, dtype=np.float64), chain
    phi = _interior_point(grow_region, nu.dot(y))
    yt = perturbed_response(phi, nu, y)
    t0 = grow(d, yt, stop)
    chain = t0.walk_to(branch.triples)
    if chain is None:
        raise ChainNotRealized(
            f"refit at phi={phi} does not reproduce the branch; the growth set "
            "is degenerate at this point"
        )
    tail = list(reversed(chain[:-1]))
    order = bottom_up_ordering(t0, tail=tail)
    t_ref = prune(t0, yt, lam, order=order, steps=len(t0.regions) - branch.length)
    missing = [rid for rid in chain if rid not in t_ref.regions]
    if missing:
        raise ChainNotRealized("pruning removed branch regions it should have kept")
    return t_ref, yt, chain


def _pruning_arrays(table: CoefficientTable, lam, t_ref, yt, chain_ids):
    """One quadratic constraint per ancestor level: the summed fitted-split
    gains below the ancestor must keep its average per-region gain at or
    above the pruning threshold."""
    L = table.branch.length
    abc = np.array([lv.fit_abc for lv in table.levels])  # (L, 3); row l-1 = split at level l
    suffix = np.cumsum(abc[::-1], axis=0)[::-1]  # suffix[l] = sums of splits l+1..L
    h_tip = subtree_gain(t_ref, chain_ids[L], yt)
    nterm_tip = n_terminal(t_ref, chain_ids[L])
    h_sib = np.zeros(L + 1)
    nterm_sib = np.zeros(L + 1, dtype=int)
    for lv in range(1, L + 1):
        sib = t_ref.sibling_of(chain_ids[lv])
        h_sib[lv] = subtree_gain(t_ref, sib, yt)
        nterm_sib[lv] = n_terminal(t_ref, sib)
    out = []
    for l in range(L):
        a, b, c = suffix[l]
        nterm_l = nterm_tip + int(nterm_sib[l + 1 :].sum())
        gamma = lam * (nterm_l - 1) - float(h_sib[l + 1 :].sum()) - h_tip
        out.append(solve_quadratic_batch(np.array([a]), np.array([b]), np.array([c - gamma]), sense="ge"))
    return out


def branch_selection_set(
    d: Dataset,
    y: np.ndarray,
    branch: Branch,
    nu: Contrast,
    lam: float,
    stop: StoppingRule,
    fitted: Tree | None = None,
    method: str = "auto",
) -> IntervalSet:
    """Statistic values for which the pruned refit contains the branch's
    whole region chain."""
    if branch.length > stop.max_level:
        return IntervalSet.empty()
    if branch.length == 0:
        return IntervalSet.full()
    y = np.asarray(y, dtype=np.float64)
    realized = fitted is not None and fitted.walk_to(branch.triples) is not None
    table = gain_coefficients(d, y, branch, nu, stop.min_node_size)
    if not table.feasible:
        return IntervalSet.empty()
    arrays = _growth_arrays(table, enforce_tie_rule=not realized)
    if arrays is None:
        return IntervalSet.empty()
    use_fast = method in ("auto", "fast") and realized and nu.kind == "sibling"

    if lam == 0:
        if use_fast:
            fast = _fast_reduce(arrays, [])
            if fast is not None:
                return fast
            if method == "fast":
                raise RuntimeError("fast path preconditions failed")
        return intersect_solutions(*_concat_arrays(arrays))

    if realized:
        anchor = pruning_reference(d, y, branch, nu, lam, stop, fitted, None)
    else:
        sg = intersect_solutions(*_concat_arrays(arrays))
        if sg.is_empty:
            return sg
        try:
            anchor = pruning_reference(d, y, branch, nu, lam, stop, None, sg)
        except ChainNotRealized:
            return IntervalSet.empty()
    t_ref, yt, chain_ids = anchor
    pruning = _pruning_arrays(table, lam, t_ref, yt, chain_ids)
    if use_fast:
        fast = _fast_reduce(arrays, pruning)
        if fast is not None:
            return fast
        if method == "fast":
            raise RuntimeError("fast path preconditions failed")
    return intersect_solutions(*_concat_arrays(arrays + pruning))


def sibling_selection_set(
    d: Dataset,
    tree: Tree,
    region_a: int,
    region_b: int,
    lam: float,
    y: np.ndarray | None = None,
    method: str = "auto",
) -> IntervalSet:
    """Conditioning set for the difference in means between two sibling
    regions of the fitted tree."""
    ra, rb = tree.region(region_a), tree.region(region_b)
    if ra.parent is None or ra.parent != rb.parent:
        raise ValueError(f"regions {region_a} and {region_b} are not siblings")
    y = np.asarray(y, dtype=np.float64) if y is not None else d.y
    nu = sibling_contrast(ra.members, rb.members, d.n, (region_a, region_b))
    branch = branch_of(tree, region_a)
    return branch_selection_set(d, y, branch, nu, lam, tree.stop, fitted=tree, method=method)


def region_selection_set(
    d: Dataset,
    tree: Tree,
    region_id: int,
    lam: float,
    y: np.ndarray | None = None,
    mode: str = "identity",
    budget: int | None = None,
    method: str = "auto",
) -> IntervalSet:
    """Conditioning set for the mean of one fitted region.

    ``mode`` picks the family of branch orderings whose union defines the
    event: just the fitted ordering (default), the first ``budget``
    orderings in lexicographic order, or all of them.
    """
    r = tree.region(region_id)
    y = np.asarray(y, dtype=np.float64) if y is not None else d.y
    nu = region_contrast(r.members, d.n, region_id)
    branch = branch_of(tree, region_id)
    L = branch.length
    if mode not in ("identity", "budget", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "budget" and (budget is None or budget < 1):
        raise ValueError("budget mode needs a positive permutation count")
    if mode == "full" and L > FULL_PERMUTATION_LIMIT:
        raise ValueError(
            f"refusing to enumerate {L}! branch orderings (depth {L} > {FULL_PERMUTATION_LIMIT})"
        )
    if mode == "identity" or L <= 1:
        perms = [tuple(range(L))]
    elif mode == "budget":
        perms = list(itertools.islice(itertools.permutations(range(L)), budget))
    else:
        perms = list(itertools.permutations(range(L)))
    pieces = []
    for perm in perms:
        try:
            pieces.append(
                branch_selection_set(
                    d, y, branch.permuted(perm), nu, lam, tree.stop, fitted=tree, method=method
                )
            )
        except ChainNotRealized:
            continue
    return union_all(pieces)


def constraint_records(
    d: Dataset,
    y: np.ndarray,
    branch: Branch,
    nu: Contrast,
    stop: StoppingRule,
) -> list[dict]:
    """Per-constraint diagnostics: the quadratic and its solution set."""
    table = gain_coefficients(d, y, branch, nu, stop.min_node_size)
    if not table.feasible:
        return [{"feasible": False, "reason": table.reason}]
    records = []
    for l, level in enumerate(table.levels, start=1):
        for j, (ranks, da, db, dc, _) in enumerate(_level_deltas(level)):
            kind, lo, hi = solve_quadratic_batch(da, db, dc, sense="le")
            for i, s in enumerate(ranks):
                records.append(
                    {
                        "level": l,
                        "feature": j,
                        "rank": int(s),
                        "a": float(da[i]),
                        "b": float(db[i]),
                        "c": float(dc[i]),
                        "solution": solution_to_interval_set(
                            int(kind[i]), float(lo[i]), float(hi[i])
                        ).to_json(),
                    }
                )
    return records
