"""Exact algebra on finite unions of real intervals.

Every conditioning set in this package is a finite union of disjoint
intervals.  This module provides the canonical representation
(:class:`IntervalSet`), sweep-based intersection/union over many sets,
and the solver that turns a scalar quadratic inequality into its exact
solution set.

Endpoint conventions: infinite endpoints are always open; a zero-width
interval must be closed on both sides (a singleton).  Canonical form is
sorted, pairwise disjoint, and non-adjacent (adjacent touching pieces
are merged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

# Quadratic solution shapes used by the vectorized solver.
KIND_EMPTY = 0
KIND_FULL = 1
KIND_SPAN = 2  # one interval [lo, hi]; lo/hi may be infinite
KIND_SPLIT = 3  # complement pair (-inf, lo] u [hi, inf)


@dataclass(frozen=True)
class Interval:
    """One nonempty real interval with open/closed endpoint flags."""

    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"empty interval: lo={lo} > hi={hi}")
        # Infinite endpoints are open by convention.
        if math.isinf(lo):
            object.__setattr__(self, "lo_closed", False)
        if math.isinf(hi):
            object.__setattr__(self, "hi_closed", False)
        if lo == hi and not (self.lo_closed and self.hi_closed):
            raise ValueError("zero-width interval must be closed on both sides")

    def contains(self, x: float) -> bool:
        if x < self.lo or x > self.hi:
            return False
        if x == self.lo and not self.lo_closed:
            return False
        if x == self.hi and not self.hi_closed:
            return False
        return True

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __repr__(self):
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{self.lo:g}, {self.hi:g}{right}"


# Event keys live on an augmented line where every real x owns the slots
# (x, 0) and (x, 1); slot (x, 0) is the point x itself, slot (x, 1) sits
# between x and every larger real.  A closed start maps to (x, 0), an open
# start to (x, 1); the first slot *after* a closed end is (x, 1), after an
# open end it is (x, 0).


def _start_key(iv: Interval) -> tuple[float, int]:
    return (iv.lo, 0 if iv.lo_closed else 1)


def _end_key(iv: Interval) -> tuple[float, int]:
    return (iv.hi, 1 if iv.hi_closed else 0)


def _interval_from_keys(start: tuple[float, int], stop: tuple[float, int]) -> Interval:
    lo, lo_k = start
    hi, hi_k = stop
    return Interval(lo, hi, lo_closed=(lo_k == 0), hi_closed=(hi_k == 1))


class IntervalSet:
    """Canonical finite union of disjoint, non-adjacent intervals."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Iterable[Interval] = ()):
        self.intervals: tuple[Interval, ...] = _canonicalize(tuple(intervals))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls((Interval(-INF, INF, False, False),))

    @classmethod
    def point(cls, x: float) -> "IntervalSet":
        return cls((Interval(x, x),))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def is_full(self) -> bool:
        return (
            len(self.intervals) == 1
            and self.intervals[0].lo == -INF
            and self.intervals[0].hi == INF
        )

    def contains(self, x: float) -> bool:
        ivs = self.intervals
        k = int(np.searchsorted([iv.lo for iv in ivs], x, side="right"))
        for i in (k - 1, k):
            if 0 <= i < len(ivs) and ivs[i].contains(x):
                return True
        return False

    def endpoints(self) -> list[float]:
        out = []
        for iv in self.intervals:
            if math.isfinite(iv.lo):
                out.append(iv.lo)
            if math.isfinite(iv.hi):
                out.append(iv.hi)
        return out

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        return intersect_all([self, other])

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return union_all([self, other])

    def measure(self) -> float:
        return sum(iv.width for iv in self.intervals)

    def to_json(self) -> list[list]:
        def enc(v):
            if v == INF:
                return "inf"
            if v == -INF:
                return "-inf"
            return v

        return [[enc(iv.lo), enc(iv.hi), iv.lo_closed, iv.hi_closed] for iv in self.intervals]

    @classmethod
    def from_json(cls, data: Sequence[Sequence]) -> "IntervalSet":
        def dec(v):
            if v == "inf":
                return INF
            if v == "-inf":
                return -INF
            return float(v)

        return cls(Interval(dec(lo), dec(hi), bool(lc), bool(hc)) for lo, hi, lc, hc in data)

    def __eq__(self, other):
        return isinstance(other, IntervalSet) and self.intervals == other.intervals

    def __hash__(self):
        return hash(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __repr__(self):
        if not self.intervals:
            return "{}"
        return " u ".join(repr(iv) for iv in self.intervals)


def _canonicalize(intervals: tuple[Interval, ...]) -> tuple[Interval, ...]:
    if not intervals:
        return ()
    ivs = sorted(intervals, key=_start_key)
    out = [ivs[0]]
    for iv in ivs[1:]:
        cur = out[-1]
        # Merge when overlapping or exactly adjacent ([a,b] u (b,c] style).
        touches = iv.lo < cur.hi or (iv.lo == cur.hi and (iv.lo_closed or cur.hi_closed))
        if touches:
            if (iv.hi, iv.hi_closed) > (cur.hi, cur.hi_closed):
                hi, hi_closed = iv.hi, iv.hi_closed
            else:
                hi, hi_closed = cur.hi, cur.hi_closed
            out[-1] = Interval(cur.lo, hi, cur.lo_closed, hi_closed)
        else:
            out.append(iv)
    return tuple(out)


def _coverage(sets: Sequence[IntervalSet], threshold: int) -> IntervalSet:
    """Sweep the endpoint events of ``sets`` and keep slots covered by at
    least ``threshold`` of them."""
    xs: list[float] = []
    ks: list[int] = []
    deltas: list[int] = []
    for s in sets:
        for iv in s.intervals:
            x0, k0 = _start_key(iv)
            x1, k1 = _end_key(iv)
            xs.extend((x0, x1))
            ks.extend((k0, k1))
            deltas.extend((1, -1))
    if not xs:
        return IntervalSet.empty() if threshold >= 1 else IntervalSet.full()
    return _runs(np.asarray(xs), np.asarray(ks), np.asarray(deltas), threshold)


def _runs(xs: np.ndarray, ks: np.ndarray, deltas: np.ndarray, threshold: int) -> IntervalSet:
    order = np.lexsort((ks, xs))
    xs, ks, deltas = xs[order], ks[order], deltas[order]
    # Collapse events sharing a slot, then accumulate coverage per gap.
    boundary = np.ones(len(xs), dtype=bool)
    boundary[1:] = (xs[1:] != xs[:-1]) | (ks[1:] != ks[:-1])
    idx = np.flatnonzero(boundary)
    slot_x = xs[idx]
    slot_k = ks[idx]
    slot_delta = np.add.reduceat(deltas, idx)
    cover = np.cumsum(slot_delta)
    hit = cover >= threshold
    out: list[Interval] = []
    start = None
    for i in range(len(slot_x)):
        if hit[i] and start is None:
            start = (slot_x[i], int(slot_k[i]))
        elif not hit[i] and start is not None:
            out.append(_interval_from_keys(start, (slot_x[i], int(slot_k[i]))))
            start = None
    # Coverage always returns to zero after the last event.
    return IntervalSet(out)


def intersect_all(sets: Sequence[IntervalSet]) -> IntervalSet:
    """Intersection of many interval sets; the empty intersection is the
    whole line."""
    sets = [s for s in sets if not s.is_full]
    if not sets:
        return IntervalSet.full()
    if any(s.is_empty for s in sets):
        return IntervalSet.empty()
    if len(sets) == 1:
        return sets[0]
    return _coverage(sets, len(sets))


def union_all(sets: Sequence[IntervalSet]) -> IntervalSet:
    """Union of many interval sets; the empty union is empty."""
    sets = [s for s in sets if not s.is_empty]
    if not sets:
        return IntervalSet.empty()
    if any(s.is_full for s in sets):
        return IntervalSet.full()
    if len(sets) == 1:
        return sets[0]
    return _coverage(sets, 1)


@dataclass(frozen=True)
class QuadraticConstraint:
    """Scalar inequality a*t**2 + b*t + c (<= or >=) 0."""

    a: float
    b: float
    c: float
    sense: str = "le"  # "le" or "ge"

    def __post_init__(self):
        if self.sense not in ("le", "ge"):
            raise ValueError(f"sense must be 'le' or 'ge', got {self.sense!r}")
        for v in (self.a, self.b, self.c):
            if not math.isfinite(v):
                raise ValueError("quadratic coefficients must be finite")

    def evaluate(self, t: float) -> float:
        return (self.a * t + self.b) * t + self.c


def solve_quadratic_batch(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, sense: str = "le", tol: float = 1e-9
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve many quadratic inequalities at once.

    Returns ``(kind, lo, hi)`` arrays.  ``kind`` is one of the KIND_*
    codes; for KIND_SPAN the solution is [lo, hi] (closed at finite
    endpoints), for KIND_SPLIT it is (-inf, lo] u [hi, inf).

    Coefficients whose leading term is below ``tol`` relative to the
    largest coefficient are demoted to linear, then constant; a
    discriminant within the same relative tolerance of zero is treated
    as a double root.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if sense == "ge":
        a, b, c = -a, -b, -c
    elif sense != "le":
        raise ValueError(f"sense must be 'le' or 'ge', got {sense!r}")

    n = a.shape[0]
    kind = np.empty(n, dtype=np.int8)
    lo = np.full(n, -INF)
    hi = np.full(n, INF)

    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.abs(c))
    a_zero = np.abs(a) <= tol * scale
    b_zero = np.abs(b) <= tol * scale

    # Constant: c <= 0 everywhere or nowhere (c within tolerance counts
    # as zero, which satisfies the non-strict inequality).
    const = a_zero & b_zero
    c_eff = np.where(np.abs(c) <= tol * scale, 0.0, c)
    kind[const] = np.where(c_eff[const] <= 0.0, KIND_FULL, KIND_EMPTY)

    # Linear: b*t + c <= 0.
    lin = a_zero & ~b_zero
    root = np.divide(-c, b, out=np.zeros_like(c), where=lin)
    kind[lin] = KIND_SPAN
    pos_b = lin & (b > 0)
    hi[pos_b] = root[pos_b]
    neg_b = lin & (b < 0)
    lo[neg_b] = root[neg_b]

    quad = ~a_zero
    if np.any(quad):
        aq, bq, cq = a[quad], b[quad], c[quad]
        disc = bq * bq - 4.0 * aq * cq
        disc_tol = tol * np.maximum(bq * bq, np.abs(4.0 * aq * cq))
        disc = np.where((disc < 0.0) & (disc >= -disc_tol), 0.0, disc)
        has_roots = disc >= 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        # Numerically stable root pair.
        q = -0.5 * (bq + np.where(bq >= 0.0, sq, -sq))
        r1 = np.where(q != 0.0, np.divide(q, aq, out=np.zeros_like(q), where=aq != 0), -bq / (2.0 * aq))
        r2 = np.where(q != 0.0, np.divide(cq, q, out=np.zeros_like(q), where=q != 0), -bq / (2.0 * aq))
        rlo = np.minimum(r1, r2)
        rhi = np.maximum(r1, r2)

        kq = np.empty(aq.shape[0], dtype=np.int8)
        lq = np.full(aq.shape[0], -INF)
        hq = np.full(aq.shape[0], INF)
        up = aq > 0.0
        # Upward parabola <= 0: between the roots, or nowhere.
        kq[up & ~has_roots] = KIND_EMPTY
        sel = up & has_roots
        kq[sel] = KIND_SPAN
        lq[sel] = rlo[sel]
        hq[sel] = rhi[sel]
        # Downward parabola <= 0: everywhere, or outside the open root gap.
        # A double root keeps the whole line (the touch point still satisfies
        # the non-strict inequality), and must not be emitted as two rays that
        # overlap at one slot.
        down = ~up
        kq[down & (~has_roots | (rlo == rhi))] = KIND_FULL
        sel = down & has_roots & (rlo < rhi)
        kq[sel] = KIND_SPLIT
        lq[sel] = rlo[sel]
        hq[sel] = rhi[sel]

        kind[quad] = kq
        lo[quad] = lq
        hi[quad] = hq

    return kind, lo, hi


def solution_to_interval_set(kind: int, lo: float, hi: float) -> IntervalSet:
    if kind == KIND_EMPTY:
        return IntervalSet.empty()
    if kind == KIND_FULL:
        return IntervalSet.full()
    if kind == KIND_SPAN:
        return IntervalSet((Interval(lo, hi),))
    return IntervalSet((Interval(-INF, lo), Interval(hi, INF)))


def solve_quadratic(q: QuadraticConstraint, tol: float = 1e-9) -> IntervalSet:
    """Exact solution set of one quadratic inequality."""
    kind, lo, hi = solve_quadratic_batch(
        np.array([q.a]), np.array([q.b]), np.array([q.c]), sense=q.sense, tol=tol
    )
    return solution_to_interval_set(int(kind[0]), float(lo[0]), float(hi[0]))


def intersect_solutions(kind: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> IntervalSet:
    """Intersect many solved constraints given as (kind, lo, hi) arrays.

    All finite endpoints produced by the solver are closed, which lets
    the sweep run on plain float keys: a span [l, h] contributes events
    (l, +1), (h, -1) at slots (l, 0) and (h, 1); a split pair contributes
    its two rays the same way.
    """
    if np.any(kind == KIND_EMPTY):
        return IntervalSet.empty()
    spans = kind == KIND_SPAN
    splits = kind == KIND_SPLIT
    n_sets = int(np.count_nonzero(spans) + np.count_nonzero(splits))
    if n_sets == 0:
        return IntervalSet.full()
    xs_parts = []
    ks_parts = []
    ds_parts = []
    if np.any(spans):
        l, h = lo[spans], hi[spans]
        xs_parts.extend((l, h))
        ks_parts.extend((np.zeros(l.size), np.ones(h.size)))
        ds_parts.extend((np.ones(l.size), -np.ones(h.size)))
    if np.any(splits):
        l, h = lo[splits], hi[splits]
        # (-inf, l] and [h, inf)
        xs_parts.extend((np.full(l.size, -INF), l, h, np.full(h.size, INF)))
        ks_parts.extend((np.zeros(l.size), np.ones(l.size), np.zeros(h.size), np.ones(h.size)))
        ds_parts.extend((np.ones(l.size), -np.ones(l.size), np.ones(h.size), -np.ones(h.size)))
    xs = np.concatenate(xs_parts)
    ks = np.concatenate(ks_parts).astype(np.int64)
    ds = np.concatenate(ds_parts).astype(np.int64)
    return _runs(xs, ks, ds, n_sets)
