"""Brute-force validators: literal refits over a statistic grid, and the
dense projection-matrix form of the gain quadratics.

Everything here exists to check the analytic machinery from the outside;
production code paths never import this module.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .cart import StoppingRule, Tree, grow, prune, region_bounds
from .contrast import Contrast, orthogonal_part, perturbed_response
from .dataset import Dataset
from .truncation import Branch


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    count: int = 2001

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.count < 2:
            raise ValueError("grid needs at least 2 points")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


def default_grid(stat: float, spread: float, count: int = 2001, span: float = 8.0) -> GridSpec:
    """Grid centered on the observed statistic, wide enough to cover all
    practically reachable mass."""
    half = span * max(spread, 1e-12)
    return GridSpec(stat - half, stat + half, count)


def _boxes(d: Dataset, tree: Tree) -> dict[int, tuple]:
    return {rid: region_bounds(d, r.path) for rid, r in tree.regions.items()}


def _sibling_event(d: Dataset, box_a: tuple, box_b: tuple):
    want = {box_a, box_b}

    def check(refit: Tree) -> bool:
        bx = _boxes(d, refit)
        for rid in refit.internal_ids():
            ca, cb = refit.regions[rid].children
            if {bx[ca], bx[cb]} == want:
                return True
        return False

    return check


def _chain_event(branch: Branch):
    def check(refit: Tree) -> bool:
        return refit.walk_to(branch.triples) is not None

    return check


def _region_event(branch: Branch):
    perms = list(itertools.permutations(range(branch.length)))

    def check(refit: Tree) -> bool:
        return any(refit.walk_to(branch.permuted(p).triples) is not None for p in perms)

    return check


def brute_force_membership(
    d: Dataset,
    y: np.ndarray,
    fitted: Tree,
    nu: Contrast,
    lam: float,
    event: tuple,
    grid: GridSpec,
    extra_points: tuple[float, ...] = (),
    dump_csv: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Refit the whole pipeline at every grid point and evaluate the
    selection event literally.

    ``event`` is ("siblings", id_a, id_b), ("chain", Branch) for one fixed
    split ordering, or ("region", Branch) for any ordering.  Returns
    (points, member flags).
    """
    kind = event[0]
    if kind == "siblings":
        bx = _boxes(d, fitted)
        check = _sibling_event(d, bx[event[1]], bx[event[2]])
    elif kind == "chain":
        check = _chain_event(event[1])
    elif kind == "region":
        check = _region_event(event[1])
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    pts = np.concatenate([grid.points(), np.asarray(extra_points, dtype=float)])
    member = np.zeros(pts.size, dtype=bool)
    for i, phi in enumerate(pts):
        y_phi = perturbed_response(float(phi), nu, y)
        refit = prune(grow(d, y_phi, fitted.stop), y_phi, lam)
        member[i] = check(refit)
    if dump_csv:
        with open(dump_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phi", "member"])
            for phi, m in zip(pts, member):
                writer.writerow([repr(float(phi)), int(m)])
    return pts, member


def _projector(indicator: np.ndarray) -> np.ndarray:
    k = indicator.sum()
    if k == 0:
        raise ValueError("projection onto an empty region is undefined")
    return np.outer(indicator, indicator) / k


def dense_gain_quadratic(
    d: Dataset, y: np.ndarray, members: np.ndarray, j: int, s: int, nu: Contrast
) -> tuple[float, float, float]:
    """Gain of split (j, s) along the perturbation line, built from the
    explicit rank-one projection matrices instead of streamed sums."""
    thr = d.order_statistic(j, s)
    ind_r = np.zeros(d.n)
    ind_r[members] = 1.0
    ind_in = np.zeros(d.n)
    ind_in[members[d.X[members, j] <= thr]] = 1.0
    ind_out = ind_r - ind_in
    if ind_in.sum() == 0 or ind_out.sum() == 0:
        raise ValueError("split leaves an empty child")
    m = _projector(ind_in) + _projector(ind_out) - _projector(ind_r)
    v = nu.dense()
    w = orthogonal_part(nu, np.asarray(y, dtype=np.float64))
    nsq = nu.norm_sq
    a = float(v @ m @ v) / nsq**2
    b = 2.0 * float(v @ m @ w) / nsq
    c = float(w @ m @ w)
    return a, b, c


def gain_matrix(d: Dataset, members: np.ndarray, j: int, s: int) -> np.ndarray:
    """The positive-semidefinite quadratic form whose value at a response
    vector is the split's gain."""
    thr = d.order_statistic(j, s)
    ind_r = np.zeros(d.n)
    ind_r[members] = 1.0
    ind_in = np.zeros(d.n)
    ind_in[members[d.X[members, j] <= thr]] = 1.0
    ind_out = ind_r - ind_in
    if ind_in.sum() == 0 or ind_out.sum() == 0:
        raise ValueError("split leaves an empty child")
    return _projector(ind_in) + _projector(ind_out) - _projector(ind_r)


# ---------------------------------------------------------------------------
# Grid agreement between analytic sets and literal refits


def _compare_on_grid(analytic, pts, member, exclusion_abs):
    endpoints = analytic.endpoints()
    mismatches = []
    excluded = 0
    for phi, m in zip(pts, member):
        if endpoints and min(abs(phi - e) for e in endpoints) <= exclusion_abs:
            excluded += 1
            continue
        if analytic.contains(float(phi)) != bool(m):
            mismatches.append(float(phi))
    return mismatches, excluded


def agreement_check(
    d: Dataset,
    tree,
    lam: float,
    grid_points: int = 2001,
    exclusion_rel: float = 1e-6,
    check_region: bool = True,
) -> dict | None:
    """Compare the analytic sibling and region conditioning sets of the
    deepest fitted split against literal refits on a statistic grid.

    Probes closer than ``exclusion_rel`` times the grid range to an
    analytic endpoint are skipped.  Returns None for a root-only tree.
    """
    from .contrast import sibling_contrast as _sib
    from .truncation import branch_of, region_selection_set, sibling_selection_set

    internal = tree.internal_ids()
    if not internal:
        return None
    split_rid = sorted(internal, key=lambda rid: (-tree.regions[rid].level, rid))[0]
    ca, cb = tree.region(split_rid).children
    nu = _sib(tree.region(ca).members, tree.region(cb).members, d.n, (ca, cb))
    stat = nu.dot(d.y)
    spread = float(np.std(d.y, ddof=1)) * np.sqrt(nu.norm_sq)
    grid = default_grid(stat, spread, count=grid_points)
    exclusion_abs = exclusion_rel * (grid.hi - grid.lo)
    report = {
        "n": d.n, "p": d.p, "lambda": lam, "split_id": split_rid,
        "branch_length": tree.region(ca).level,
    }

    analytic = sibling_selection_set(d, tree, ca, cb, lam)
    pts, member = brute_force_membership(
        d, d.y, tree, nu, lam, ("siblings", ca, cb), grid, extra_points=(-1e6, 1e6)
    )
    mism, excl = _compare_on_grid(analytic, pts, member, exclusion_abs)
    report["sibling"] = {
        "set": analytic.to_json(), "probes": int(pts.size), "excluded": excl,
        "mismatches": mism,
    }

    if check_region:
        from .contrast import region_contrast as _reg

        branch = branch_of(tree, ca)
        nu_r = _reg(tree.region(ca).members, d.n, ca)
        stat_r = nu_r.dot(d.y)
        spread_r = float(np.std(d.y, ddof=1)) * np.sqrt(nu_r.norm_sq)
        grid_r = default_grid(stat_r, spread_r, count=grid_points)
        analytic_r = region_selection_set(d, tree, ca, lam, mode="identity")
        pts_r, member_r = brute_force_membership(
            d, d.y, tree, nu_r, lam, ("chain", branch), grid_r, extra_points=(-1e6, 1e6)
        )
        mism_r, excl_r = _compare_on_grid(
            analytic_r, pts_r, member_r, exclusion_rel * (grid_r.hi - grid_r.lo)
        )
        report["region"] = {
            "set": analytic_r.to_json(), "probes": int(pts_r.size), "excluded": excl_r,
            "mismatches": mism_r,
        }
    report["agree"] = not report["sibling"]["mismatches"] and not report.get("region", {}).get("mismatches")
    return report
