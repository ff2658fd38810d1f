import itertools

import numpy as np
import pytest

from treeval import (
    Dataset,
    StoppingRule,
    branch_of,
    branch_selection_set,
    fit_cart,
    growth_set,
    region_contrast,
    region_selection_set,
    sibling_contrast,
    sibling_selection_set,
)
from treeval.cart import grow, prune, bottom_up_ordering
from treeval.contrast import perturbed_response
from treeval.oracle import brute_force_membership, default_grid, dense_gain_quadratic
from treeval.truncation import (
    Branch,
    ConditionViolation,
    branch_member_chain,
    gain_coefficients,
    pruning_reference,
)

from conftest import fitted_instance, make_dataset

STOP = StoppingRule(3, 1, 0.0)


def sibling_pair(tree, rid):
    ca, cb = tree.region(rid).children
    return ca, cb


def sib_nu(d, tree, rid):
    ca, cb = sibling_pair(tree, rid)
    return ca, cb, sibling_contrast(tree.region(ca).members, tree.region(cb).members, d.n, (ca, cb))


class TestBranch:
    def test_root_branch_empty(self, rng):
        d, tree = fitted_instance(rng)
        assert branch_of(tree, tree.root_id).length == 0

    def test_depth_two_triples_match_splits(self, rng):
        d, tree = fitted_instance(rng, min_splits=3)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        b = branch_of(tree, deep.id)
        assert b.length == deep.level
        assert b.triples == deep.path

    def test_chain_membership_matches_scratch(self, rng):
        d, tree = fitted_instance(rng, min_splits=2)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        b = branch_of(tree, deep.id)
        chain = branch_member_chain(d, b)
        for level, idx in enumerate(chain):
            keep = np.ones(d.n, dtype=bool)
            for j, s, e in b.triples[:level]:
                thr = d.order_statistic(j, s)
                keep &= (d.X[:, j] <= thr) if e == 1 else (d.X[:, j] > thr)
            np.testing.assert_array_equal(idx, np.flatnonzero(keep))


class TestGainCoefficients:
    def test_detached_split_is_constant_in_phi(self, rng):
        # A split at the deepest level whose parent region does not touch
        # the contrast support keeps the observed gain for every phi.
        d, tree = fitted_instance(rng, n=16, min_splits=3)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        rid_split = deep.parent
        ca, cb, nu = sib_nu(d, tree, rid_split)
        table = gain_coefficients(d, d.y, branch_of(tree, ca), nu, 1)
        support = set(nu.indices.tolist())
        for lv in table.levels[:-1]:
            parent = set(lv.parent_members.tolist())
            j_fit, s_fit, _ = lv.triple
            thr = d.order_statistic(j_fit, s_fit)
            for j, ranks in enumerate(lv.ranks):
                for i, s in enumerate(ranks):
                    t = d.order_statistic(j, int(s))
                    inside = {m for m in parent if d.X[m, j] <= t}
                    cut = bool(support & inside) and bool(support - inside)
                    if support <= parent and not cut:
                        assert lv.a[j][i] == pytest.approx(0.0, abs=1e-12)
                        assert lv.b[j][i] == pytest.approx(0.0, abs=1e-10)

    def test_matches_dense_oracle(self, rng):
        d = make_dataset(rng, n=10, p=2)
        members = np.arange(10)
        nu = sibling_contrast([0, 1, 2], [5, 6], 10)
        checked = 0
        for j in range(2):
            for s in range(1, 10):
                thr = d.order_statistic(j, s)
                vals = d.X[members, j]
                if not (vals.min() <= thr < vals.max()):
                    continue
                branch = Branch(((j, s, 1),))
                table = gain_coefficients(d, d.y, branch, nu, 1, check_condition=False)
                lv = table.levels[0]
                pos = np.searchsorted(lv.ranks[j], s)
                got = (lv.a[j][pos], lv.b[j][pos], lv.c[j][pos])
                want = dense_gain_quadratic(d, d.y, members, j, s, nu)
                np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-11)
                checked += 1
        assert checked > 5

    def test_evaluates_to_observed_gain(self, rng):
        from treeval.cart import gain

        d, tree = fitted_instance(rng, n=15, p=2, min_splits=2)
        rid = sorted(tree.internal_ids())[-1]
        ca, cb, nu = sib_nu(d, tree, rid)
        table = gain_coefficients(d, d.y, branch_of(tree, ca), nu, 1)
        stat = nu.dot(d.y)
        for lv in table.levels:
            j_fit, s_fit, _ = lv.triple
            a, b, c = lv.fit_abc
            want = gain(d, lv.parent_members, j_fit, s_fit, d.y)
            assert (a * stat + b) * stat + c == pytest.approx(want, rel=1e-8, abs=1e-10)

    def test_condition_violation_detected(self, rng):
        d, tree = fitted_instance(rng, min_splits=2)
        rid = sorted(tree.internal_ids())[-1]
        ca, cb = sibling_pair(tree, rid)
        other = [t for t in tree.terminal_ids() if t not in (ca, cb)]
        if not other:
            pytest.skip("no third region in this draw")
        nu_other = region_contrast(tree.region(other[0]).members, d.n)
        with pytest.raises(ConditionViolation):
            gain_coefficients(d, d.y, branch_of(tree, ca), nu_other, 1)


class TestGrowthSet:
    def test_contains_observed_statistic(self, rng):
        for _ in range(5):
            d, tree = fitted_instance(rng)
            rid = sorted(tree.internal_ids())[0]
            ca, cb, nu = sib_nu(d, tree, rid)
            s = growth_set(d, d.y, branch_of(tree, ca), nu, STOP)
            assert s.contains(nu.dot(d.y))

    def test_grid_refit_agreement(self, rng):
        d, tree = fitted_instance(rng, n=14, p=2, lam=0.0, min_splits=2)
        rid = sorted(tree.internal_ids(), key=lambda r: -tree.regions[r].level)[0]
        ca, cb, nu = sib_nu(d, tree, rid)
        analytic = sibling_selection_set(d, tree, ca, cb, 0.0)
        grid = default_grid(nu.dot(d.y), float(np.std(d.y, ddof=1)) * np.sqrt(nu.norm_sq), count=501)
        pts, member = brute_force_membership(d, d.y, tree, nu, 0.0, ("siblings", ca, cb), grid)
        eps = 1e-6 * (grid.hi - grid.lo)
        ends = analytic.endpoints()
        for x, m in zip(pts, member):
            if ends and min(abs(x - e) for e in ends) <= eps:
                continue
            assert analytic.contains(float(x)) == bool(m)

    def test_fast_equals_generic(self, rng):
        for _ in range(4):
            d, tree = fitted_instance(rng, n=16, p=2)
            for rid in tree.internal_ids():
                ca, cb, nu = sib_nu(d, tree, rid)
                b = branch_of(tree, ca)
                assert growth_set(d, d.y, b, nu, STOP, method="fast") == growth_set(
                    d, d.y, b, nu, STOP, method="generic"
                )


class TestPruningReference:
    def test_fitted_branch_returns_fitted_tree(self, rng):
        d, tree = fitted_instance(rng, lam=1.0)
        rid = sorted(tree.internal_ids())[0]
        ca, cb, nu = sib_nu(d, tree, rid)
        t_ref, yt, chain = pruning_reference(d, d.y, branch_of(tree, ca), nu, 1.0, STOP, fitted=tree)
        assert t_ref is tree
        np.testing.assert_array_equal(yt, d.y)
        assert chain[-1] == ca

    def _permuted_case(self, rng):
        for _ in range(40):
            d, tree = fitted_instance(rng, n=14, p=2, lam=0.5, min_splits=2)
            deep = max(tree.regions.values(), key=lambda r: r.level)
            if deep.level < 2:
                continue
            branch = branch_of(tree, deep.id)
            nu = region_contrast(deep.members, d.n, deep.id)
            for perm in itertools.permutations(range(branch.length)):
                if perm == tuple(range(branch.length)):
                    continue
                pb = branch.permuted(perm)
                sg = growth_set(d, d.y, pb, nu, STOP, realized=False)
                if not sg.is_empty and not sg.is_full:
                    return d, tree, pb, nu, sg
        pytest.skip("no permuted branch with a usable growth set in the draw budget")

    def test_phi_choice_does_not_matter(self, rng):
        d, tree, pb, nu, sg = self._permuted_case(rng)
        pieces = [iv for iv in sg.intervals]
        probes = []
        for iv in pieces[:2]:
            lo = iv.lo if np.isfinite(iv.lo) else iv.hi - 2.0
            hi = iv.hi if np.isfinite(iv.hi) else iv.lo + 2.0
            probes.append(0.5 * (lo + hi))
        if len(probes) == 1:
            probes.append(probes[0] + 0.25 * (pieces[0].hi - pieces[0].lo if np.isfinite(pieces[0].width) else 1.0))
        trees = []
        for phi in probes:
            if not sg.contains(phi):
                continue
            yt = perturbed_response(phi, nu, d.y)
            t0 = grow(d, yt, STOP)
            chain = t0.walk_to(pb.triples)
            assert chain is not None
            order = bottom_up_ordering(t0, tail=list(reversed(chain[:-1])))
            t_ref = prune(t0, yt, 0.5, order=order, steps=len(t0.regions) - pb.length)
            trees.append({tuple(r.path) for r in t_ref.regions.values()})
        if len(trees) >= 2:
            assert trees[0] == trees[1]

    def test_constructed_tree_contains_chain(self, rng):
        d, tree, pb, nu, sg = self._permuted_case(rng)
        t_ref, yt, chain = pruning_reference(d, d.y, pb, nu, 0.5, STOP, fitted=tree, grow_region=sg)
        assert all(rid in t_ref.regions for rid in chain)
        walk = t_ref.walk_to(pb.triples)
        assert walk == chain


class TestBranchSelectionSet:
    def test_lambda_zero_equals_growth(self, rng):
        d, tree = fitted_instance(rng, lam=0.0, min_splits=2)
        rid = sorted(tree.internal_ids())[-1]
        ca, cb, nu = sib_nu(d, tree, rid)
        b = branch_of(tree, ca)
        assert branch_selection_set(d, d.y, b, nu, 0.0, STOP, fitted=tree) == growth_set(
            d, d.y, b, nu, STOP
        )

    def test_growth_contains_pruned(self, rng):
        for lam in (0.5, 2.0, 6.0):
            d, tree = fitted_instance(rng, lam=lam)
            rid = sorted(tree.internal_ids())[0]
            ca, cb, nu = sib_nu(d, tree, rid)
            b = branch_of(tree, ca)
            sg = growth_set(d, d.y, b, nu, STOP)
            sp = branch_selection_set(d, d.y, b, nu, lam, STOP, fitted=tree)
            for x in np.linspace(-10, 10, 101):
                if sp.contains(float(x)):
                    assert sg.contains(float(x))

    def test_monotone_in_lambda(self, rng):
        d, tree = fitted_instance(rng, lam=0.5, min_splits=1)
        rid = sorted(tree.internal_ids())[0]
        ca, cb, nu = sib_nu(d, tree, rid)
        b = branch_of(tree, ca)
        small = branch_selection_set(d, d.y, b, nu, 0.5, STOP, fitted=tree)
        # The same branch under heavier pruning keeps fewer statistic values.
        big = branch_selection_set(d, d.y, b, nu, 4.0, STOP, fitted=None)
        for x in np.linspace(-10, 10, 101):
            if big.contains(float(x)):
                assert small.contains(float(x))


class TestSiblingSelectionSet:
    def test_contains_statistic(self, rng):
        for lam in (0.0, 1.0, 4.0):
            d, tree = fitted_instance(rng, lam=lam)
            for rid in tree.internal_ids():
                ca, cb, nu = sib_nu(d, tree, rid)
                assert sibling_selection_set(d, tree, ca, cb, lam).contains(nu.dot(d.y))

    def test_rejects_non_siblings(self, rng):
        d, tree = fitted_instance(rng, min_splits=2)
        rid = sorted(tree.internal_ids())[0]
        ca, cb = sibling_pair(tree, rid)
        with pytest.raises(ValueError):
            sibling_selection_set(d, tree, ca, rid, 0.0)

    def test_pruned_grid_oracle(self, rng):
        d, tree = fitted_instance(rng, n=13, p=2, lam=2.0)
        rid = sorted(tree.internal_ids(), key=lambda r: -tree.regions[r].level)[0]
        ca, cb, nu = sib_nu(d, tree, rid)
        analytic = sibling_selection_set(d, tree, ca, cb, 2.0)
        grid = default_grid(nu.dot(d.y), float(np.std(d.y, ddof=1)) * np.sqrt(nu.norm_sq), count=501)
        pts, member = brute_force_membership(d, d.y, tree, nu, 2.0, ("siblings", ca, cb), grid)
        eps = 1e-6 * (grid.hi - grid.lo)
        ends = analytic.endpoints()
        for x, m in zip(pts, member):
            if ends and min(abs(x - e) for e in ends) <= eps:
                continue
            assert analytic.contains(float(x)) == bool(m)


class TestRegionSelectionSet:
    def test_identity_contains_statistic(self, rng):
        for lam in (0.0, 2.0):
            d, tree = fitted_instance(rng, lam=lam)
            for rid in sorted(tree.regions):
                nu = region_contrast(tree.region(rid).members, d.n, rid)
                s = region_selection_set(d, tree, rid, lam)
                assert s.contains(nu.dot(d.y))

    def test_identity_equals_full_at_depth_one(self, rng):
        d, tree = fitted_instance(rng, lam=0.0, min_splits=1)
        child = tree.region(tree.root_id).children[0]
        if tree.region(child).level != 1:
            pytest.skip("unexpected depth")
        assert region_selection_set(d, tree, child, 0.0, mode="identity") == region_selection_set(
            d, tree, child, 0.0, mode="full"
        )

    def test_identity_subset_of_full(self, rng):
        d, tree = fitted_instance(rng, n=13, p=2, lam=0.0, min_splits=3)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        if deep.level < 2:
            pytest.skip("tree too shallow in this draw")
        s_id = region_selection_set(d, tree, deep.id, 0.0, mode="identity")
        s_full = region_selection_set(d, tree, deep.id, 0.0, mode="full")
        for x in np.linspace(-12, 12, 201):
            if s_id.contains(float(x)):
                assert s_full.contains(float(x))

    def test_full_matches_permutation_oracle(self, rng):
        d, tree = fitted_instance(rng, n=12, p=2, lam=1.0, min_splits=3)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        if deep.level < 2:
            pytest.skip("tree too shallow in this draw")
        nu = region_contrast(tree.region(deep.id).members, d.n, deep.id)
        analytic = region_selection_set(d, tree, deep.id, 1.0, mode="full")
        grid = default_grid(nu.dot(d.y), float(np.std(d.y, ddof=1)) * np.sqrt(nu.norm_sq), count=301)
        pts, member = brute_force_membership(
            d, d.y, tree, nu, 1.0, ("region", branch_of(tree, deep.id)), grid
        )
        eps = 1e-6 * (grid.hi - grid.lo)
        ends = analytic.endpoints()
        for x, m in zip(pts, member):
            if ends and min(abs(x - e) for e in ends) <= eps:
                continue
            assert analytic.contains(float(x)) == bool(m)

    def test_budget_mode_monotone(self, rng):
        d, tree = fitted_instance(rng, n=13, p=2, lam=0.0, min_splits=3)
        deep = max(tree.regions.values(), key=lambda r: r.level)
        if deep.level < 2:
            pytest.skip("tree too shallow in this draw")
        s1 = region_selection_set(d, tree, deep.id, 0.0, mode="budget", budget=1)
        s2 = region_selection_set(d, tree, deep.id, 0.0, mode="budget", budget=2)
        assert s1 == region_selection_set(d, tree, deep.id, 0.0, mode="identity")
        for x in np.linspace(-12, 12, 101):
            if s1.contains(float(x)):
                assert s2.contains(float(x))

    def test_full_mode_depth_guard(self, rng):
        d, tree = fitted_instance(rng)
        with pytest.raises(ValueError):
            region_selection_set(d, tree, tree.root_id, 0.0, mode="unknown")
