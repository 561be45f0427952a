"""Attribute binning: construction and the equi-depth bin-merge heuristic.

Bins are half-open ``[lo, hi)`` except the last, which is closed at the
domain max.  A binning with a single zero-width bin ``[v, v]`` is the
degenerate single-value case; otherwise boundaries are strictly increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDomainError, InputError


@dataclass(frozen=True)
class Binning:
    """Ordered bin boundaries plus per-bin weight estimates."""

    boundaries: np.ndarray  # float64, nbins + 1
    weights: np.ndarray = field(default=None)  # float64, nbins

    def __post_init__(self):
        b = np.asarray(self.boundaries, np.float64)
        object.__setattr__(self, "boundaries", b)
        if b.size < 2:
            raise InputError("a binning needs at least two boundaries")
        w = self.weights
        w = np.zeros(b.size - 1) if w is None else np.asarray(w, np.float64)
        object.__setattr__(self, "weights", w)
        if w.size != b.size - 1:
            raise InputError("weights length must equal bin count")
        diffs = np.diff(b)
        if b.size == 2:
            if diffs[0] < 0:
                raise InputError("boundaries must be nondecreasing")
        elif not (diffs > 0).all():
            raise InputError("boundaries must be strictly increasing")

    @property
    def nbins(self) -> int:
        return self.boundaries.size - 1

    @property
    def lo(self) -> float:
        return float(self.boundaries[0])

    @property
    def hi(self) -> float:
        return float(self.boundaries[-1])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def bin_of(self, values) -> np.ndarray:
        """Bin index per value; values equal to the max land in the last bin."""
        idx = np.searchsorted(self.boundaries, np.asarray(values), side="right") - 1
        return np.clip(idx, 0, self.nbins - 1)

    def __eq__(self, other):
        if not isinstance(other, Binning):
            return NotImplemented
        return np.array_equal(self.boundaries, other.boundaries) and np.array_equal(
            self.weights, other.weights
        )


def equi_width(lo: float, hi: float, k: int) -> Binning:
    """k equal-width bins spanning [lo, hi]; weights start at zero."""
    if k < 1:
        raise InputError("bin count must be >= 1")
    if not lo < hi:
        raise DegenerateDomainError(f"degenerate domain [{lo}, {hi}]")
    return Binning(np.linspace(lo, hi, k + 1))


def equi_depth_exact(values, counts, k: int) -> Binning:
    """Equi-depth bins from an exact (value, count) histogram.

    Fewer distinct values than k collapses to one bin per distinct value.
    Cut points are midpoints between adjacent distinct values, so a single
    value's population is never split.
    """
    values = np.asarray(values, np.float64)
    counts = np.asarray(counts, np.float64)
    if values.size == 0:
        raise InputError("empty histogram")
    if k < 1:
        raise InputError("bin count must be >= 1")
    if values.size > 1 and not (np.diff(values) > 0).all():
        raise InputError("histogram values must be sorted and unique")
    m = values.size
    if m == 1:
        return Binning(np.array([values[0], values[0]]), counts.copy())
    if m <= k:
        cuts = np.arange(1, m)  # one bin per value
    else:
        cum = np.cumsum(counts)
        targets = cum[-1] * np.arange(1, k) / k
        cuts = np.searchsorted(cum, targets, side="left") + 1
        cuts = np.unique(np.clip(cuts, 1, m - 1))
    # midpoints of adjacent floats can collide after rounding; keep only
    # strictly increasing interior boundaries and recount
    mids = np.unique((values[cuts - 1] + values[cuts]) / 2.0)
    mids = mids[(mids > values[0]) & (mids < values[-1])]
    boundaries = np.concatenate(([values[0]], mids, [values[-1]]))
    binning = Binning(boundaries)
    weights = np.bincount(
        binning.bin_of(values), weights=counts, minlength=binning.nbins
    )
    return Binning(boundaries, weights)


def merged_weight(source: Binning, lo: float, hi: float) -> float:
    """Weight of [lo, hi] assuming uniform value distribution inside bins."""
    b = source.boundaries
    w = source.weights
    if source.nbins == 1 and b[0] == b[1]:
        return float(w[0]) if lo <= b[0] <= hi else 0.0
    width = np.diff(b)
    overlap = np.minimum(hi, b[1:]) - np.maximum(lo, b[:-1])
    frac = np.clip(overlap, 0.0, None) / width
    return float(frac @ w)


def wsse(binning: Binning, target_total: float | None = None, bins: int | None = None) -> float:
    """Weighted sum of squared deviations from the ideal equal share."""
    w = binning.weights
    total = float(w.sum()) if target_total is None else float(target_total)
    nb = binning.nbins if bins is None else bins
    share = total / nb
    return float(((w - share) ** 2).sum())


def _initial_equi_width_selection(boundaries: np.ndarray, bins: int) -> np.ndarray:
    """Pick bins+1 distinct source boundaries nearest an equal-width grid."""
    nb = boundaries.size - 1
    targets = np.linspace(boundaries[0], boundaries[-1], bins + 1)
    chosen: list[int] = []
    used = np.zeros(nb + 1, bool)
    for t in targets:
        idx = int(np.argmin(np.where(used, np.inf, np.abs(boundaries - t))))
        used[idx] = True
        chosen.append(idx)
    return np.array(sorted(chosen))


def merge_bins_iterative(
    source: Binning, bins: int, trace: list | None = None
) -> Binning:
    """Select an approximately equi-depth subset of the source boundaries.

    Starts from an equal-width selection, then repeatedly performs the most
    beneficial bin split together with the cheapest disjoint merge while the
    weighted sum square error strictly decreases.  Each accepted step keeps
    the bin count constant, so the result has exactly min(bins, |source|)
    bins and its boundaries are a subset of the source boundaries.
    """
    nb = source.nbins
    if nb <= bins:
        if trace is not None:
            trace.append(wsse(source))
        return source
    cumw = np.concatenate(([0.0], np.cumsum(source.weights)))
    total = cumw[-1]
    share = total / bins
    bounds = source.boundaries

    sel = _initial_equi_width_selection(bounds, bins)

    def sel_weights(s):
        return np.diff(cumw[s])

    def err(w):
        return (w - share) ** 2

    cur = float(err(sel_weights(sel)).sum())
    if trace is not None:
        trace.append(cur)

    max_iters = 10 * nb
    for _ in range(max_iters):
        w = sel_weights(sel)
        # candidate splits: every unselected source boundary, evaluated in place
        cand = np.setdiff1d(np.arange(nb + 1), sel, assume_unique=True)
        if cand.size == 0:
            break
        owner = np.searchsorted(sel, cand) - 1  # bin each cut falls into
        w1 = cumw[cand] - cumw[sel[owner]]
        w2 = w[owner] - w1
        d_split = err(w1) + err(w2) - err(w[owner])
        best = np.lexsort((bounds[cand], d_split))[0]  # ties: lower boundary value
        split_cut = cand[best]
        split_bin = owner[best]
        split_gain = d_split[best]

        # candidate merges: adjacent selected pairs not touching the split bin
        pair = np.arange(bins - 1)
        pair = pair[(pair != split_bin) & (pair + 1 != split_bin)]
        if pair.size == 0:
            break
        d_merge = err(w[pair] + w[pair + 1]) - err(w[pair]) - err(w[pair + 1])
        bestm = np.lexsort((bounds[sel[pair + 1]], d_merge))[0]
        merge_pair = pair[bestm]
        merge_cost = d_merge[bestm]

        new = cur + float(split_gain + merge_cost)
        if not new < cur:  # accept only a strict improvement
            break
        sel = np.sort(np.concatenate((np.delete(sel, merge_pair + 1), [split_cut])))
        cur = new
        if trace is not None:
            trace.append(cur)

    return Binning(bounds[sel], sel_weights(sel))
