"""CART regression trees: greedy growing and cost-complexity pruning.

Split candidates are global order-statistic ranks; a rank is admissible
inside a region when it actually separates the region's members and
both children meet the minimum node size.  Among equal-gain candidates
the smallest (feature, rank) wins, and the same rule is applied when
trees are refit on perturbed responses, so refits are exactly
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset

# Relative slack used when comparing competing gains across features.
GAIN_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class StoppingRule:
    max_level: int = 3
    min_node_size: int = 1
    min_gain: float = 0.0

    def __post_init__(self):
        if self.max_level < 0:
            raise ValueError("max_level must be >= 0")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if not (math.isfinite(self.min_gain) and self.min_gain >= 0):
            raise ValueError("min_gain must be finite and >= 0")

    def to_json(self) -> dict:
        return {
            "max_level": self.max_level,
            "min_node_size": self.min_node_size,
            "min_gain": self.min_gain,
        }

    @classmethod
    def from_json(cls, data: dict) -> "StoppingRule":
        return cls(int(data["max_level"]), int(data["min_node_size"]), float(data["min_gain"]))


@dataclass(frozen=True)
class Split:
    feature: int
    rank: int  # 1-based global order-statistic rank
    threshold: float


@dataclass(frozen=True, eq=False)
class Region:
    """One node of the tree: an axis-aligned cell plus its member rows."""

    id: int
    level: int
    parent: int | None
    edge: tuple[int, int, int] | None  # (feature, rank, side) carving this region
    path: tuple[tuple[int, int, int], ...]
    members: np.ndarray
    count: int
    mean: float
    sse: float
    split: Split | None = None
    children: tuple[int, int] | None = None  # ids of (side-1, side-0) children

    @property
    def is_terminal(self) -> bool:
        return self.children is None


@dataclass(frozen=True, eq=False)
class Tree:
    regions: dict[int, Region]
    root_id: int
    stop: StoppingRule
    lam: float | None = None

    def region(self, rid: int) -> Region:
        try:
            return self.regions[rid]
        except KeyError:
            raise KeyError(f"no region with id {rid} in tree") from None

    def __len__(self):
        return len(self.regions)

    def terminal_ids(self) -> list[int]:
        return [rid for rid, r in self.regions.items() if r.is_terminal]

    def internal_ids(self) -> list[int]:
        return [rid for rid, r in self.regions.items() if not r.is_terminal]

    def subtree_ids(self, rid: int) -> list[int]:
        """The region and all of its descendants."""
        out, stack = [], [rid]
        while stack:
            cur = stack.pop()
            out.append(cur)
            ch = self.regions[cur].children
            if ch is not None:
                stack.extend(ch)
        return out

    def sibling_of(self, rid: int) -> int:
        r = self.region(rid)
        if r.parent is None:
            raise ValueError("root region has no sibling")
        a, b = self.regions[r.parent].children
        return b if rid == a else a

    def ancestor_chain(self, rid: int) -> list[int]:
        """Ids from ``rid`` up to the root, inclusive."""
        out = [rid]
        while self.regions[out[-1]].parent is not None:
            out.append(self.regions[out[-1]].parent)
        return out

    def walk_to(self, triples) -> list[int] | None:
        """Follow (feature, rank, side) edges from the root; None if any
        edge is not a recorded split of the tree."""
        chain = [self.root_id]
        for j, s, e in triples:
            cur = self.regions[chain[-1]]
            if cur.children is None or cur.split is None:
                return None
            if (cur.split.feature, cur.split.rank) != (j, s):
                return None
            chain.append(cur.children[0] if e == 1 else cur.children[1])
        return chain


def region_bounds(d: Dataset, path) -> tuple[tuple[float, float], ...]:
    """Per-feature (open lower, closed upper] bounds of the cell a
    halfspace path describes; the canonical geometric identity of a region."""
    lo = np.full(d.p, -np.inf)
    hi = np.full(d.p, np.inf)
    for j, s, e in path:
        t = d.order_statistic(j, s)
        if e == 1:
            hi[j] = min(hi[j], t)
        else:
            lo[j] = max(lo[j], t)
    return tuple(zip(lo.tolist(), hi.tolist()))


def _sse(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    m = values.mean()
    return float(((values - m) ** 2).sum())


def gain(d: Dataset, members: np.ndarray, j: int, s: int, y: np.ndarray) -> float:
    """Reduction in within-region squared error from splitting ``members``
    at the s-th order statistic of feature j."""
    thr = d.order_statistic(j, s)
    vals = d.X[members, j]
    left = members[vals <= thr]
    right = members[vals > thr]
    if left.size == 0 or right.size == 0:
        raise ValueError(f"split (feature={j}, rank={s}) leaves an empty child")
    g = _sse(y[members]) - _sse(y[left]) - _sse(y[right])
    return max(g, 0.0)


@dataclass(frozen=True)
class _Candidate:
    feature: int
    rank: int
    threshold: float
    gain: float
    boundary: int  # members on the low side, in feature order
    ordered_members: np.ndarray


def best_split(d: Dataset, members: np.ndarray, y: np.ndarray, min_node_size: int = 1):
    """Best admissible split of a member set, or None.

    Ties are broken toward the smallest feature index and then the
    smallest rank; gains within ``GAIN_TIE_RTOL * sse`` of each other
    count as tied.
    """
    m = members.size
    if m < 2 * min_node_size or m < 2:
        return None
    mask = np.zeros(d.n, dtype=bool)
    mask[members] = True
    y_r = y[members]
    mean = y_r.mean()
    sse_r = float(((y_r - mean) ** 2).sum())
    tol = GAIN_TIE_RTOL * max(1.0, sse_r)

    best: _Candidate | None = None
    k = np.arange(1, m)
    for j in range(d.p):
        sel = mask[d.sort_idx[j]]
        ordm = d.sort_idx[j][sel]
        v = d.sorted_values[j][sel]
        valid = v[:-1] < v[1:]
        if min_node_size > 1:
            valid &= (k >= min_node_size) & (m - k >= min_node_size)
        if not valid.any():
            continue
        r = y[ordm]
        cs = np.cumsum(r)
        csq = np.cumsum(r * r)
        left = csq[:-1] - cs[:-1] ** 2 / k
        right = (csq[-1] - csq[:-1]) - (cs[-1] - cs[:-1]) ** 2 / (m - k)
        gains = np.where(valid, sse_r - left - right, -np.inf)
        kidx = int(np.argmax(gains))
        g = float(gains[kidx])
        if best is None or g > best.gain + tol:
            thr = float(v[kidx])
            best = _Candidate(
                feature=j,
                rank=d.rank_of_threshold(j, thr),
                threshold=thr,
                gain=max(g, 0.0),
                boundary=kidx + 1,
                ordered_members=ordm,
            )
    return best


def grow(d: Dataset, y: np.ndarray, stop: StoppingRule) -> Tree:
    """Recursive binary splitting from the full covariate space."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != d.n:
        raise ValueError("response length does not match dataset")
    regions: dict[int, Region] = {}
    counter = [0]

    def build(members, level, path, edge, parent_id):
        rid = counter[0]
        counter[0] += 1
        vals = y[members]
        mean = float(vals.mean())
        sse = float(((vals - mean) ** 2).sum())
        cand = None
        if level < stop.max_level:
            cand = best_split(d, members, y, stop.min_node_size)
            if cand is not None and cand.gain < stop.min_gain:
                cand = None
        if cand is None:
            regions[rid] = Region(rid, level, parent_id, edge, path, members, members.size, mean, sse)
            return rid
        left = np.sort(cand.ordered_members[: cand.boundary])
        right = np.sort(cand.ordered_members[cand.boundary :])
        split = Split(cand.feature, cand.rank, cand.threshold)
        triple_in = (cand.feature, cand.rank, 1)
        triple_out = (cand.feature, cand.rank, 0)
        cid_in = build(left, level + 1, path + (triple_in,), triple_in, rid)
        cid_out = build(right, level + 1, path + (triple_out,), triple_out, rid)
        regions[rid] = Region(
            rid, level, parent_id, edge, path, members, members.size, mean, sse,
            split=split, children=(cid_in, cid_out),
        )
        return rid

    root = build(np.arange(d.n), 0, (), None, None)
    return Tree(regions=regions, root_id=root, stop=stop, lam=None)


def bottom_up_ordering(tree: Tree, tail: list[int] | None = None) -> list[int]:
    """Every region before all of its ancestors; an optional ancestor
    chain (deepest first, ending at the root) occupies the final slots."""
    if tail:
        ids = list(tail)
        if ids[-1] != tree.root_id:
            raise ValueError("tail must end at the root region")
        for below, above in zip(ids, ids[1:]):
            if tree.region(below).parent != above:
                raise ValueError("tail is not an ancestor chain")
        tail_set = set(ids)
        rest = sorted(
            (rid for rid in tree.regions if rid not in tail_set),
            key=lambda rid: (-tree.regions[rid].level, rid),
        )
        return rest + ids
    return sorted(tree.regions, key=lambda rid: (-tree.regions[rid].level, rid))


def _check_bottom_up(tree: Tree, order) -> None:
    pos = {rid: i for i, rid in enumerate(order)}
    if len(pos) != len(tree.regions) or set(pos) != set(tree.regions):
        raise ValueError("ordering must enumerate every region exactly once")
    for rid, r in tree.regions.items():
        if r.parent is not None and pos[r.parent] < pos[rid]:
            raise ValueError("ordering is not bottom-up: ancestor precedes descendant")


def _subtree_stats(regions, children, rid, y, sse_cache):
    """(terminal count, summed terminal SSE) under the current children map."""
    ch = children[rid]
    if ch is None:
        if rid not in sse_cache:
            sse_cache[rid] = _sse(y[regions[rid].members])
        return 1, sse_cache[rid]
    n1, s1 = _subtree_stats(regions, children, ch[0], y, sse_cache)
    n0, s0 = _subtree_stats(regions, children, ch[1], y, sse_cache)
    return n1 + n0, s1 + s0


def subtree_gain(tree: Tree, rid: int, y: np.ndarray) -> float:
    """SSE of the region minus the summed SSE of its terminal descendants."""
    children = {i: r.children for i, r in tree.regions.items()}
    _, term_sse = _subtree_stats(tree.regions, children, rid, y, {})
    return _sse(y[tree.region(rid).members]) - term_sse


def n_terminal(tree: Tree, rid: int) -> int:
    ch = tree.region(rid).children
    if ch is None:
        return 1
    return n_terminal(tree, ch[0]) + n_terminal(tree, ch[1])


def g_value(tree: Tree, rid: int, y: np.ndarray) -> float:
    """Average per-region SSE reduction contributed by the subtree."""
    r = tree.region(rid)
    if r.is_terminal:
        raise ValueError(f"region {rid} is terminal; its average gain is undefined")
    children = {i: rr.children for i, rr in tree.regions.items()}
    n_term, term_sse = _subtree_stats(tree.regions, children, rid, y, {})
    return (_sse(y[r.members]) - term_sse) / (n_term - 1)


def prune(
    tree: Tree,
    y: np.ndarray,
    lam: float,
    order: list[int] | None = None,
    steps: int | None = None,
) -> Tree:
    """Replay cost-complexity pruning over a bottom-up ordering.

    Processing region R in the current tree, R's descendants are deleted
    whenever the average per-region gain falls below ``lam``.  ``steps``
    limits the replay to the first k iterations (the partially pruned
    tree is occasionally needed as an anchor for further computations).
    """
    if lam < 0:
        raise ValueError("complexity parameter must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    if order is None:
        order = bottom_up_ordering(tree)
    else:
        _check_bottom_up(tree, order)
    children = {i: r.children for i, r in tree.regions.items()}
    alive = set(tree.regions)
    sse_cache: dict[int, float] = {}
    upto = len(order) if steps is None else min(steps, len(order))
    for k in range(upto):
        rid = order[k]
        if children[rid] is None:
            continue
        n_term, term_sse = _subtree_stats(tree.regions, children, rid, y, sse_cache)
        if rid not in sse_cache:
            sse_cache[rid] = _sse(y[tree.regions[rid].members])
        g = (sse_cache[rid] - term_sse) / (n_term - 1)
        if g < lam:
            stack = list(children[rid])
            children[rid] = None
            while stack:
                cur = stack.pop()
                alive.discard(cur)
                ch = children[cur]
                if ch is not None:
                    stack.extend(ch)
                children[cur] = None
    out: dict[int, Region] = {}
    for rid in tree.regions:
        if rid not in alive:
            continue
        r = tree.regions[rid]
        if children[rid] is None and r.children is not None:
            r = replace(r, children=None, split=None)
        out[rid] = r
    return Tree(regions=out, root_id=tree.root_id, stop=tree.stop, lam=lam)


def fit_cart(d: Dataset, y: np.ndarray, stop: StoppingRule, lam: float) -> tuple[Tree, Tree]:
    """Grow the full tree, then prune at complexity ``lam``.

    Returns (unpruned, pruned)."""
    full = grow(d, y, stop)
    return full, prune(full, y, lam)


def predict(tree: Tree, X) -> np.ndarray:
    """Mean response of the terminal region containing each row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        rid = tree.root_id
        while True:
            r = tree.regions[rid]
            if r.children is None:
                out[i] = r.mean
                break
            rid = r.children[0] if x[r.split.feature] <= r.split.threshold else r.children[1]
    return out


def tree_to_dict(tree: Tree) -> dict:
    entries = []
    for rid in bottom_up_ordering(tree):
        r = tree.regions[rid]
        if r.edge is None:
            split = None
        else:
            j, s, e = r.edge
            thr = None
            parent = tree.regions[r.parent]
            if parent.split is not None and (parent.split.feature, parent.split.rank) == (j, s):
                thr = parent.split.threshold
            split = {"feature": j, "rank": s, "threshold": thr, "side": e}
        entries.append(
            {
                "id": rid,
                "parent": r.parent,
                "split": split,
                "n": r.count,
                "mean": r.mean,
                "sse": r.sse,
            }
        )
    return {
        "schema": "treeval/tree/v1",
        "lambda": tree.lam,
        "stopping": tree.stop.to_json(),
        "root": tree.root_id,
        "regions": entries,
    }


def tree_from_dict(data: dict, d: Dataset) -> Tree:
    """Rebuild a tree against a dataset, recomputing memberships from the
    recorded halfspaces."""
    stop = StoppingRule.from_json(data["stopping"])
    entries = {e["id"]: e for e in data["regions"]}
    kids: dict[int, list[tuple[int, int]]] = {}
    for e in data["regions"]:
        if e["parent"] is not None:
            kids.setdefault(e["parent"], []).append((e["split"]["side"], e["id"]))
    regions: dict[int, Region] = {}

    def build(rid, members, level, path):
        e = entries[rid]
        if e["n"] != members.size:
            raise ValueError(
                f"region {rid} records {e['n']} members but the dataset yields {members.size}"
            )
        vals = d.y[members]
        mean = float(vals.mean()) if members.size else 0.0
        sse = _sse(vals)
        edge = path[-1] if path else None
        pair = kids.get(rid)
        if pair is None:
            regions[rid] = Region(rid, level, e["parent"], edge, path, members, members.size, mean, sse)
            return
        if len(pair) != 2:
            raise ValueError(f"region {rid} must have exactly two children")
        pair = dict(pair)
        if set(pair) != {0, 1}:
            raise ValueError(f"children of region {rid} must cover both split sides")
        child = entries[pair[1]]["split"]
        j, s = child["feature"], child["rank"]
        thr = d.order_statistic(j, s)
        split = Split(j, s, thr)
        inside = members[d.X[members, j] <= thr]
        outside = members[d.X[members, j] > thr]
        regions[rid] = Region(
            rid, level, e["parent"], edge, path, members, members.size, mean, sse,
            split=split, children=(pair[1], pair[0]),
        )
        build(pair[1], inside, level + 1, path + ((j, s, 1),))
        build(pair[0], outside, level + 1, path + ((j, s, 0),))

    root = data["root"]
    build(root, np.arange(d.n), 0, ())
    lam = data.get("lambda")
    return Tree(regions=regions, root_id=root, stop=stop, lam=lam)
