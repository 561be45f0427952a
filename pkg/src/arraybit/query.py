"""Query normalization, per-node match evaluation and breadth-first
traversal with exact leaf resolution, cardinality estimation and
membership queries.

A query is answered in a single descent: at every node six child masks are
derived (partial/complete for the attribute, the dimensions, and their
combination).  Complete children are taken whole without touching cell
data; partial children are descended and, at the leaves, resolved exactly
with candidate checks against raw values.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .chunkstore import ArraySchema, ChunkStore, QueryStats, leaf_query
from .errors import DataError, InputError
from .hierindex import Index, LeafEntry

__all__ = [
    "RawQuery",
    "Query",
    "MatchBitmaps",
    "ResultSet",
    "CompleteRegion",
    "normalize",
    "attribute_match",
    "dimension_match",
    "eval_node",
    "execute",
    "membership",
    "estimate",
    "expand_dim_memberships",
    "QueryStats",
]


@dataclass
class RawQuery:
    """Constraints as parsed; missing pieces are filled by normalization."""

    attr_lo: float | None = None
    attr_hi: float | None = None
    dims: dict = field(default_factory=dict)  # name -> (lo | None, hi | None)
    values: tuple | None = None  # attribute membership set
    dim_values: dict = field(default_factory=dict)  # name -> value set


@dataclass(frozen=True)
class Query:
    """A complete query: every dimension constrained, inclusive bounds."""

    attr_lo: float
    attr_hi: float
    dim_ranges: tuple  # ((lo, hi), ...) in schema dimension order
    values: tuple | None = None


@dataclass
class MatchBitmaps:
    """The six child masks produced while evaluating one node."""

    p: int = 0
    p_dim: int = 0
    p_star: int = 0
    c: int = 0
    c_dim: int = 0
    c_star: int = 0


@dataclass(frozen=True)
class CompleteRegion:
    """A subtree whose every non-empty cell satisfies the query."""

    level: int
    z: int
    extent: tuple
    count: int


class ResultSet:
    """Complete regions plus exact per-chunk hit vectors."""

    def __init__(self, schema: ArraySchema):
        self.schema = schema
        self.complete: list[CompleteRegion] = []
        self.partial: dict = {}  # chunk coords -> BitVector

    @property
    def count(self) -> int:
        return sum(r.count for r in self.complete) + sum(
            bv.count_ones() for bv in self.partial.values()
        )

    def merge(self, other: "ResultSet") -> None:
        self.complete.extend(other.complete)
        for coords, bv in other.partial.items():
            mine = self.partial.get(coords)
            self.partial[coords] = bv if mine is None else (mine | bv)

    def _chunk_ids(self, chunk, positions: np.ndarray) -> np.ndarray:
        local = np.unravel_index(positions, chunk.shape)
        coords = tuple(l + o for l, o in zip(local, chunk.offsets))
        return np.ravel_multi_index(coords, self.schema.shape)

    def cell_ids(self, store: ChunkStore) -> np.ndarray:
        """All matching cells as sorted global row-major ids."""
        parts = []
        cs = self.schema.chunk_shape
        for region in self.complete:
            ranges = [
                range(lo // c, hi // c + 1) for (lo, hi), c in zip(region.extent, cs)
            ]
            for coords in itertools.product(*ranges):
                chunk = store.chunks.get(coords)
                if chunk is None:
                    continue
                pos = np.flatnonzero(chunk.nonempty.reshape(-1))
                parts.append(self._chunk_ids(chunk, pos))
        for coords, bv in self.partial.items():
            chunk = store.chunks[coords]
            parts.append(self._chunk_ids(chunk, bv.to_positions()))
        if not parts:
            return np.empty(0, np.int64)
        return np.sort(np.concatenate(parts)).astype(np.int64)

    def coordinates(self, store: ChunkStore) -> np.ndarray:
        ids = self.cell_ids(store)
        return np.stack(np.unravel_index(ids, self.schema.shape), axis=1)


# ---------------------------------------------------------------------------
# normalization


def normalize(raw: RawQuery, schema: ArraySchema, attr_bounds=None) -> Query:
    """Fill missing constraints to a complete query over all dimensions."""
    names = schema.dim_names
    for name in raw.dims:
        if name not in names:
            raise InputError(f"unknown dimension {name!r}")
    lo_default = attr_bounds[0] if attr_bounds else -np.inf
    hi_default = attr_bounds[1] if attr_bounds else np.inf
    values = None
    if raw.values is not None:
        if raw.attr_lo is not None or raw.attr_hi is not None:
            raise InputError("attribute membership and range cannot be combined")
        values = tuple(sorted(set(float(v) for v in raw.values)))
        attr_lo = min(values) if values else lo_default
        attr_hi = max(values) if values else hi_default
    else:
        attr_lo = lo_default if raw.attr_lo is None else float(raw.attr_lo)
        attr_hi = hi_default if raw.attr_hi is None else float(raw.attr_hi)
        if attr_lo > attr_hi:
            raise InputError(f"inverted attribute range [{attr_lo}, {attr_hi}]")
    ranges = []
    for name, extent in schema.dims:
        lo, hi = raw.dims.get(name, (None, None))
        lo = 0 if lo is None else max(int(lo), 0)
        hi = extent - 1 if hi is None else min(int(hi), extent - 1)
        if lo > hi:
            raise InputError(f"empty range for dimension {name!r}")
        ranges.append((lo, hi))
    return Query(attr_lo, attr_hi, tuple(ranges), values)


def expand_dim_memberships(raw: RawQuery, schema: ArraySchema) -> list[RawQuery]:
    """Rewrite dimension value sets into per-run range queries."""
    if not raw.dim_values:
        return [raw]
    per_dim = []
    for name, vals in raw.dim_values.items():
        if name not in schema.dim_names:
            raise InputError(f"unknown dimension {name!r}")
        vals = sorted(set(int(v) for v in vals))
        runs = []
        for v in vals:
            if runs and v == runs[-1][1] + 1:
                runs[-1] = (runs[-1][0], v)
            else:
                runs.append((v, v))
        per_dim.append((name, runs))
    out = []
    for combo in itertools.product(*(runs for _, runs in per_dim)):
        dims = dict(raw.dims)
        for (name, _), rng in zip(per_dim, combo):
            dims[name] = rng
        out.append(replace(raw, dims=dims, dim_values={}))
    return out


# ---------------------------------------------------------------------------
# per-node evaluation


def attribute_match(node, a_lo: float, a_hi: float) -> tuple:
    """Child masks (partial, complete) for the attribute range.

    The partial side over-approximates across merged bins and is verified
    later; the complete side requires the child's whole value range inside
    the query and never over-approximates.  Four table lookups total.
    """
    mask = node.child_mask
    c = node.min_ge_under(a_lo) & node.max_le_under(a_hi) & mask
    p = node.started_over(a_hi) & node.alive_over(a_lo) & mask & ~c
    return p, c


def dimension_match(node, query: Query, dimbm, index: Index) -> tuple:
    """Child masks (partial, complete) for all dimension ranges.

    A bound cutting strictly inside a child slab flags the whole slab as
    partial; bucket-range lookups collect the covered children.  A bound at
    a clipped child's actual border still demotes that child from complete
    to partial (the lookup sees only bucket geometry), which is harmless
    because partial children are verified downstream.
    """
    ndim = index.fanout.ndim
    span = index.child_span(node.level)
    origin = index.node_origin(node.level, node.coords)
    p = 0
    c = node.child_mask
    for d in range(ndim):
        qlo, qhi = query.dim_ranges[d]
        dlo, dhi = node.extent[d]
        if qlo > dlo and (qlo - origin[d]) % span[d] != 0:
            p |= dimbm.partial[d][(qlo - origin[d]) // span[d]]
        if qhi < dhi and (qhi - origin[d] + 1) % span[d] != 0:
            p |= dimbm.partial[d][(qhi - origin[d]) // span[d]]
        b_lo = (max(qlo, dlo) - origin[d]) // span[d]
        b_hi = (min(qhi, dhi) - origin[d]) // span[d]
        c &= dimbm.bucket_range(d, b_lo, b_hi)
    p &= c
    c &= ~p
    return p, c


def eval_node(node, query: Query, index: Index, stats: QueryStats | None = None):
    """Combined (partial, complete) child masks for one node."""
    bm = eval_node_full(node, query, index, stats)
    return bm.p_star, bm.c_star


def eval_node_full(node, query: Query, index: Index, stats=None) -> MatchBitmaps:
    if stats is not None:
        stats.nodes_evaluated += 1
    if query.attr_hi < node.amin or query.attr_lo > node.amax:
        return MatchBitmaps()
    for (qlo, qhi), (dlo, dhi) in zip(query.dim_ranges, node.extent):
        if qhi < dlo or qlo > dhi:
            return MatchBitmaps()
    p, c = attribute_match(node, query.attr_lo, query.attr_hi)
    p_dim, c_dim = dimension_match(node, query, index.dimbitmaps, index)
    c_star = c & c_dim & node.child_mask
    p_star = (p | c) & (p_dim | c_dim) & ~c_star & node.child_mask
    return MatchBitmaps(p=p, p_dim=p_dim, p_star=p_star, c=c, c_dim=c_dim, c_star=c_star)


# ---------------------------------------------------------------------------
# traversal


def _node_disjoint(node, query: Query) -> bool:
    if query.attr_hi < node.amin or query.attr_lo > node.amax:
        return True
    return any(
        qhi < dlo or qlo > dhi
        for (qlo, qhi), (dlo, dhi) in zip(query.dim_ranges, node.extent)
    )


def _node_complete(node, query: Query) -> bool:
    if not (query.attr_lo <= node.amin and node.amax <= query.attr_hi):
        return False
    return all(
        qlo <= dlo and dhi <= qhi
        for (qlo, qhi), (dlo, dhi) in zip(query.dim_ranges, node.extent)
    )


def _iter_slots(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _prepare(index: Index, query) -> Query:
    if isinstance(query, RawQuery):
        root = index.root
        bounds = (root.amin, root.amax) if root is not None else None
        query = normalize(query, index.schema, bounds)
    return query


def _resolve_leaf(index: Index, entry: LeafEntry, query: Query, stats):
    store = index.store
    if store is None:
        raise DataError("index has no attached data store for leaf resolution")
    chunk = store.chunks[entry.coords]
    local = [
        (qlo - off, qhi - off)
        for (qlo, qhi), off in zip(query.dim_ranges, chunk.offsets)
    ]
    return leaf_query(
        chunk, entry.leaf, index.attribute, query.attr_lo, query.attr_hi,
        local, store, stats,
    )


def execute(index: Index, query, stats: QueryStats | None = None,
            trace: list | None = None) -> ResultSet:
    """Answer a normalized query with one breadth-first index traversal."""
    query = _prepare(index, query)
    if query.values is not None:
        return membership(index, query, stats, trace)
    rs = ResultSet(index.schema)
    root = index.root
    if root is None or _node_disjoint(root, query):
        return rs
    depth = index.depth
    slot_bits = index.fanout.slot_bits
    if _node_complete(root, query):
        index.fetch(depth, 0, stats, trace)
        rs.complete.append(CompleteRegion(depth, 0, root.extent, root.count))
        return rs
    queue = deque([(depth, 0, False)])
    while queue:
        level, z, is_complete = queue.popleft()
        node = index.fetch(level, z, stats, trace)
        if is_complete:
            rs.complete.append(CompleteRegion(level, z, node.extent, node.count))
            continue
        if level == 0:
            hits = _resolve_leaf(index, node, query, stats)
            if hits.any():
                rs.partial[node.coords] = hits
            continue
        p_star, c_star = eval_node(node, query, index, stats)
        child_level = level - 1
        base = z << slot_bits
        for slot in _iter_slots(p_star | c_star):
            queue.append((child_level, base | slot, bool(c_star >> slot & 1)))
    return rs


def membership(index: Index, query, stats: QueryStats | None = None,
               trace: list | None = None) -> ResultSet:
    """Answer a value-set query as a union of maximal degenerate ranges."""
    query = _prepare(index, query)
    rs = ResultSet(index.schema)
    if not query.values:
        return rs
    is_int = index.schema.attr_type(index.attribute) == "int64"
    runs = []
    for v in query.values:  # values are sorted and unique
        if runs and is_int and v == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], v)
        else:
            runs.append((v, v))
    for lo, hi in runs:
        sub = Query(lo, hi, query.dim_ranges, None)
        rs.merge(execute(index, sub, stats, trace))
    return rs


def estimate(index: Index, query, level_budget: int,
             stats: QueryStats | None = None) -> tuple:
    """Bounds (min, max) on the matching cell count within a level budget.

    The minimum counts complete subtrees found so far; the maximum adds the
    still-unresolved partial frontier.  With a budget reaching the leaves
    the frontier resolves exactly and both bounds meet.
    """
    if level_budget < 0:
        raise InputError("level budget must be >= 0")
    query = _prepare(index, query)
    root = index.root
    if root is None or _node_disjoint(root, query):
        return 0, 0
    depth = index.depth
    if _node_complete(root, query):
        return root.count, root.count
    slot_bits = index.fanout.slot_bits
    lo = 0
    frontier = 0
    queue = deque([(depth, 0, False)])
    while queue:
        level, z, is_complete = queue.popleft()
        node = index.fetch(level, z, stats)
        d = depth - level
        if is_complete:
            lo += node.count
            continue
        if level == 0:
            if d <= level_budget:
                hits = _resolve_leaf(index, node, query, stats)
                lo += hits.count_ones()
            else:
                frontier += node.count
            continue
        if d >= level_budget:
            frontier += node.count
            continue
        p_star, c_star = eval_node(node, query, index, stats)
        base = z << slot_bits
        for slot in _iter_slots(p_star | c_star):
            queue.append((level - 1, base | slot, bool(c_star >> slot & 1)))
    return lo, lo + frontier
