"""Array data model: schema, regular grid chunking, ingestion and the
per-chunk binned bitmap index used at the leaves.

Cells are laid out row-major inside each chunk; boundary chunks are clipped
by the global shape.  Empty cells are NaN for float attributes and a
declared sentinel for integer attributes; internally only the non-empty
mask is authoritative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import Binning, equi_depth_exact
from .bitvec import BitVector
from .errors import DataError, InputError

_DTYPES = {"float64": np.float64, "int64": np.int64}


@dataclass
class QueryStats:
    """Operational counters collected while answering a query."""

    nodes_evaluated: int = 0
    bitmap_fetches: int = 0
    candidate_bitmap_fetches: int = 0
    candidate_checks: int = 0
    blocks_read: int = 0
    _blocks: set = field(default_factory=set, repr=False)

    def touch_block(self, key) -> None:
        if key not in self._blocks:
            self._blocks.add(key)
            self.blocks_read += 1


@dataclass(frozen=True)
class ArraySchema:
    """A<a_1..a_m>[d_1..d_n] with a regular chunk grid."""

    dims: tuple  # ((name, extent), ...)
    attributes: tuple  # ((name, "float64"|"int64"), ...)
    chunk_shape: tuple
    empty_values: dict = field(default_factory=dict)  # int attrs need one

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple((str(n), int(e)) for n, e in self.dims))
        object.__setattr__(
            self, "attributes", tuple((str(n), str(t)) for n, t in self.attributes)
        )
        object.__setattr__(self, "chunk_shape", tuple(int(c) for c in self.chunk_shape))
        # NaN is the implied float sentinel; drop explicit ones so schema
        # equality is well defined
        floats = {n for n, t in self.attributes if t == "float64"}
        cleaned = {
            k: v
            for k, v in self.empty_values.items()
            if not (k in floats and isinstance(v, float) and np.isnan(v))
        }
        object.__setattr__(self, "empty_values", cleaned)
        if not self.dims or not self.attributes:
            raise InputError("schema needs at least one dimension and one attribute")
        if any(e < 1 for _, e in self.dims):
            raise InputError("dimension extents must be >= 1")
        if len(self.chunk_shape) != len(self.dims):
            raise InputError("chunk_shape rank must match dimension count")
        if any(c < 1 for c in self.chunk_shape):
            raise InputError("chunk extents must be >= 1")
        for name, typ in self.attributes:
            if typ not in _DTYPES:
                raise InputError(f"unsupported attribute type {typ!r}")
            if typ == "int64" and name not in self.empty_values:
                raise InputError(f"integer attribute {name!r} needs an empty sentinel")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple:
        return tuple(e for _, e in self.dims)

    @property
    def dim_names(self) -> tuple:
        return tuple(n for n, _ in self.dims)

    @property
    def chunk_grid(self) -> tuple:
        return tuple(-(-e // c) for e, c in zip(self.shape, self.chunk_shape))

    def attr_type(self, name: str) -> str:
        for n, t in self.attributes:
            if n == name:
                return t
        raise InputError(f"unknown attribute {name!r}")

    def empty_value(self, name: str):
        typ = self.attr_type(name)
        if typ == "float64":
            return self.empty_values.get(name, float("nan"))
        return self.empty_values[name]

    def ravel(self, coords: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(coords).T), self.shape)

    def with_extents(self, extents) -> "ArraySchema":
        dims = tuple((n, e) for (n, _), e in zip(self.dims, extents))
        return ArraySchema(dims, self.attributes, self.chunk_shape, dict(self.empty_values))


def locate(schema: ArraySchema, cell) -> tuple:
    """Map a global cell to (chunk grid coords, local row-major offset)."""
    cell = tuple(int(c) for c in cell)
    if len(cell) != schema.ndim:
        raise InputError("cell rank mismatch")
    for c, e in zip(cell, schema.shape):
        if not 0 <= c < e:
            raise InputError(f"cell {cell} outside array extents {schema.shape}")
    coords = tuple(c // s for c, s in zip(cell, schema.chunk_shape))
    shape = chunk_shape_at(schema, coords)
    local = tuple(c - g * s for c, g, s in zip(cell, coords, schema.chunk_shape))
    return coords, int(np.ravel_multi_index(local, shape))


def delocate(schema: ArraySchema, coords, offset: int) -> tuple:
    """Inverse of :func:`locate`."""
    shape = chunk_shape_at(schema, coords)
    local = np.unravel_index(offset, shape)
    return tuple(int(g * s + l) for g, s, l in zip(coords, schema.chunk_shape, local))


def chunk_shape_at(schema: ArraySchema, coords) -> tuple:
    """Chunk shape at a grid position, clipped by the global shape."""
    return tuple(
        min((g + 1) * s, e) - g * s
        for g, s, e in zip(coords, schema.chunk_shape, schema.shape)
    )


class Chunk:
    """One grid tile: row-major attribute payloads plus the non-empty mask."""

    __slots__ = ("coords", "offsets", "shape", "values", "nonempty", "_ebm", "nonempty_count")

    def __init__(self, coords, offsets, shape, values, nonempty):
        self.coords = tuple(coords)
        self.offsets = tuple(offsets)
        self.shape = tuple(shape)
        self.values = values
        self.nonempty = nonempty
        self.nonempty_count = int(nonempty.sum())
        self._ebm = None

    @property
    def empty_mask(self) -> BitVector:
        if self._ebm is None:
            self._ebm = BitVector.from_dense(self.nonempty.reshape(-1))
        return self._ebm

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent(self) -> tuple:
        return tuple((o, o + s - 1) for o, s in zip(self.offsets, self.shape))

    def values_flat(self, attr: str) -> np.ndarray:
        return self.values[attr].reshape(-1)


class ChunkStore:
    """All non-empty chunks of one array, keyed by grid coordinates."""

    def __init__(self, schema: ArraySchema, chunks: dict):
        self.schema = schema
        self.chunks = chunks
        self._slabs: dict = {}

    @classmethod
    def from_dense(cls, schema: ArraySchema, data: dict) -> "ChunkStore":
        """Chunk dense global arrays; tiles with no non-empty cell are omitted."""
        for name, _ in schema.attributes:
            if name not in data:
                raise InputError(f"missing data for attribute {name!r}")
            if tuple(data[name].shape) != schema.shape:
                raise InputError(f"attribute {name!r} shape mismatch")
        chunks = {}
        for coords in np.ndindex(*schema.chunk_grid):
            offsets = tuple(g * s for g, s in zip(coords, schema.chunk_shape))
            shape = chunk_shape_at(schema, coords)
            sl = tuple(slice(o, o + s) for o, s in zip(offsets, shape))
            vals = {}
            nonempty = None
            for name, typ in schema.attributes:
                block = np.ascontiguousarray(data[name][sl], dtype=_DTYPES[typ])
                vals[name] = block
                mask = _nonempty_mask(block, typ, schema.empty_value(name))
                nonempty = mask if nonempty is None else (nonempty | mask)
            if nonempty.any():
                chunks[coords] = Chunk(coords, offsets, shape, vals, nonempty)
        return cls(schema, chunks)

    def nonempty_total(self) -> int:
        return sum(c.nonempty_count for c in self.chunks.values())

    def iter_chunks(self):
        for coords in sorted(self.chunks):
            yield self.chunks[coords]

    def dense(self, attr: str) -> np.ndarray:
        """Reassemble the global array, empties filled with the sentinel."""
        typ = self.schema.attr_type(attr)
        out = np.full(self.schema.shape, self.schema.empty_value(attr), _DTYPES[typ])
        for chunk in self.chunks.values():
            sl = tuple(slice(o, o + s) for o, s in zip(chunk.offsets, chunk.shape))
            out[sl] = chunk.values[attr]
        return out

    def nonempty_dense(self) -> np.ndarray:
        out = np.zeros(self.schema.shape, bool)
        for chunk in self.chunks.values():
            sl = tuple(slice(o, o + s) for o, s in zip(chunk.offsets, chunk.shape))
            out[sl] = chunk.nonempty
        return out

    def slab_dense(self, shape: tuple, dim: int, lo: int, hi: int) -> np.ndarray:
        """Cells of a chunk of `shape` whose dim-coordinate lies in [lo, hi].

        Identical for every chunk of the same (clipped) shape, so cached.
        """
        key = (shape, dim, lo, hi)
        got = self._slabs.get(key)
        if got is None:
            n = int(np.prod(shape))
            stride = int(np.prod(shape[dim + 1 :]))
            coord = (np.arange(n) // stride) % shape[dim]
            got = (coord >= lo) & (coord <= hi)
            self._slabs[key] = got
        return got

    def slab(self, shape: tuple, dim: int, lo: int, hi: int) -> BitVector:
        return BitVector.from_dense(self.slab_dense(shape, dim, lo, hi))


def _nonempty_mask(block, typ, sentinel):
    if typ == "float64":
        if np.isnan(sentinel):
            return ~np.isnan(block)
        return block != sentinel
    return block != sentinel


# ---------------------------------------------------------------------------
# binned bitmap index (shared by chunk leaves and the linearized baseline)


class BinnedBitmapIndex:
    """Equi-depth binned bitmaps over one value column in a fixed cell order.

    Encodings:
      equality  one bitmap per bin (|B| bitmaps)
      range     cumulative prefixes, |B|-1 bitmaps (the full prefix is the
                non-empty mask itself)
      interval  sliding windows of ceil(|B|/2) consecutive bins,
                ceil(|B|/2) bitmaps; any contiguous bin range is two fetches
    """

    __slots__ = ("binning", "encoding", "bitmaps", "span_lo", "span_hi", "ebm", "length", "count")

    def __init__(self, binning, encoding, bitmaps, span_lo, span_hi, ebm):
        self.binning = binning
        self.encoding = encoding
        self.bitmaps = bitmaps
        self.span_lo = span_lo
        self.span_hi = span_hi
        self.ebm = ebm
        self.length = len(ebm)
        self.count = ebm.count_ones()

    @property
    def amin(self) -> float:
        return float(self.span_lo[0])

    @property
    def amax(self) -> float:
        return float(self.span_hi[-1])

    @property
    def nbins(self) -> int:
        return self.binning.nbins

    @classmethod
    def build(cls, values: np.ndarray, nonempty: np.ndarray, bins: int, encoding: str,
              ebm: BitVector | None = None) -> "BinnedBitmapIndex":
        if encoding not in ("equality", "range", "interval"):
            raise InputError(f"unknown encoding {encoding!r}")
        live = values[nonempty]
        if live.size == 0:
            raise InputError("cannot index an all-empty column")
        uticks, ucounts = np.unique(live, return_counts=True)
        binning = equi_depth_exact(uticks, ucounts, bins)
        k = binning.nbins
        ubins = binning.bin_of(uticks)
        span_lo = np.full(k, np.inf)
        span_hi = np.full(k, -np.inf)
        np.minimum.at(span_lo, ubins, uticks)
        np.maximum.at(span_hi, ubins, uticks)
        binidx = np.full(values.shape, -1, np.int64)
        binidx[nonempty] = binning.bin_of(live)
        if ebm is None:
            ebm = BitVector.from_dense(nonempty)
        bitmaps = []
        if encoding == "equality":
            for j in range(k):
                bitmaps.append(BitVector.from_dense(binidx == j))
        elif encoding == "range":
            for j in range(k - 1):
                bitmaps.append(BitVector.from_dense((binidx >= 0) & (binidx <= j)))
        else:
            m = -(-k // 2)
            for s in range(m):
                bitmaps.append(BitVector.from_dense((binidx >= s) & (binidx <= s + m - 1)))
        return cls(binning, encoding, bitmaps, span_lo, span_hi, ebm)

    # -- bin-range evaluation ------------------------------------------

    def _get(self, j: int, stats, candidate: bool) -> BitVector:
        if stats is not None:
            if candidate:
                stats.candidate_bitmap_fetches += 1
            else:
                stats.bitmap_fetches += 1
        return self.bitmaps[j]

    def _combine(self, a: int, b: int, get, ebm, AND, OR, ANDNOT):
        """Bin range [a, b] as a combination of at most two fetched bitmaps
        (plus the non-empty mask), independent of the bitmap domain."""
        k = self.nbins
        if a == 0 and b == k - 1:
            return ebm()
        if self.encoding == "equality":
            out = get(a)
            for j in range(a + 1, b + 1):
                out = OR(out, get(j))
            return out
        if self.encoding == "range":
            hi = ebm() if b == k - 1 else get(b)
            return hi if a == 0 else ANDNOT(hi, get(a - 1))
        # interval windows: W_s covers bins [s, s + m - 1]
        m = -(-k // 2)

        def prefix(p):  # bins [0, p], p < k - 1
            if p <= m - 2:
                return ANDNOT(get(0), get(p + 1))
            if p == m - 1:
                return get(0)
            return OR(get(0), get(p + 1 - m))

        if a == 0:
            return prefix(b)
        if b == k - 1:
            return ANDNOT(ebm(), prefix(a - 1))
        if b - a + 1 > m:
            return OR(get(a), get(b + 1 - m))
        if b <= m - 2:
            return ANDNOT(get(a), get(b + 1))
        if b == m - 1:
            return AND(get(a), get(0))
        if a >= m:
            return ANDNOT(get(b + 1 - m), get(a - m))
        return AND(get(a), get(b + 1 - m))

    def bins_bitmap(self, a: int, b: int, stats=None, candidate=False) -> BitVector:
        """Cells whose bin lies in [a, b]; at most two fetches except equality."""
        if a > b:
            return BitVector.zeros(self.length)
        return self._combine(
            a, b,
            get=lambda j: self._get(j, stats, candidate),
            ebm=lambda: self.ebm,
            AND=lambda x, y: x & y,
            OR=lambda x, y: x | y,
            ANDNOT=lambda x, y: x.andnot(y),
        )

    def bins_dense(self, a: int, b: int, ebm_dense, stats=None, candidate=False) -> np.ndarray:
        """Dense-domain twin of :meth:`bins_bitmap` for short leaf vectors."""
        if a > b:
            return np.zeros(self.length, bool)
        return self._combine(
            a, b,
            get=lambda j: self._get(j, stats, candidate).to_dense(),
            ebm=lambda: ebm_dense,
            AND=np.logical_and,
            OR=np.logical_or,
            ANDNOT=lambda x, y: x & ~y,
        )

    def _query_bins(self, lo: float, hi: float):
        """Bin span of [lo, hi] plus the boundary bins needing verification."""
        k = self.nbins
        if hi < self.amin or lo > self.amax:
            return None
        lo_bin = 0 if lo <= self.amin else int(self.binning.bin_of(lo))
        hi_bin = k - 1 if hi >= self.amax else int(self.binning.bin_of(hi))
        cand_bins = []
        if not lo <= self.span_lo[lo_bin]:
            cand_bins.append(lo_bin)
        if not hi >= self.span_hi[hi_bin] and hi_bin not in cand_bins:
            cand_bins.append(hi_bin)
        return lo_bin, hi_bin, cand_bins

    def range_query(self, lo: float, hi: float, stats=None):
        """Split [lo, hi] into (certain hits, candidate cells to verify)."""
        plan = self._query_bins(lo, hi)
        if plan is None:
            zeros = BitVector.zeros(self.length)
            return zeros, zeros
        lo_bin, hi_bin, cand_bins = plan
        span = self.bins_bitmap(lo_bin, hi_bin, stats)
        if not cand_bins:
            return span, BitVector.zeros(self.length)
        cand = self.bins_bitmap(cand_bins[0], cand_bins[0], stats, candidate=True)
        for j in cand_bins[1:]:
            cand = cand | self.bins_bitmap(j, j, stats, candidate=True)
        return span.andnot(cand), cand

    def range_query_dense(self, lo: float, hi: float, ebm_dense, stats=None):
        """Dense-domain twin of :meth:`range_query`."""
        plan = self._query_bins(lo, hi)
        if plan is None:
            return np.zeros(self.length, bool), None
        lo_bin, hi_bin, cand_bins = plan
        span = self.bins_dense(lo_bin, hi_bin, ebm_dense, stats)
        if not cand_bins:
            return span, None
        cand = self.bins_dense(cand_bins[0], cand_bins[0], ebm_dense, stats, candidate=True)
        for j in cand_bins[1:]:
            cand |= self.bins_dense(j, j, ebm_dense, stats, candidate=True)
        return span & ~cand, cand

    def size_bytes(self) -> int:
        n = len(self.ebm.to_bytes())
        n += sum(len(b.to_bytes()) for b in self.bitmaps)
        n += self.binning.boundaries.nbytes + self.binning.weights.nbytes
        n += self.span_lo.nbytes + self.span_hi.nbytes
        return n


@dataclass(frozen=True)
class PlainLeaf:
    """Marker for chunks too small to index; queries scan the raw values."""

    amin: float
    amax: float
    count: int
    binning = None


def build_leaf_index(chunk: Chunk, attr: str, bins: int, encoding: str, e: int = 4):
    """Index one chunk, or fall back to a plain value list below e*bins cells."""
    if chunk.nonempty_count == 0:
        return None
    vals = chunk.values_flat(attr)
    live = vals[chunk.nonempty.reshape(-1)]
    if chunk.nonempty_count < e * bins:
        return PlainLeaf(float(live.min()), float(live.max()), chunk.nonempty_count)
    return BinnedBitmapIndex.build(
        vals, chunk.nonempty.reshape(-1), bins, encoding, ebm=chunk.empty_mask
    )


def leaf_query(
    chunk: Chunk,
    leaf,
    attr: str,
    a_lo: float,
    a_hi: float,
    dim_ranges,
    store: ChunkStore,
    stats: QueryStats | None = None,
) -> BitVector:
    """Exact matching cells of one chunk.

    Interior bins contribute without touching raw values; the at most two
    boundary bins are verified cell by cell (the candidate check).
    dim_ranges are chunk-local inclusive (lo, hi) per dimension.
    """
    if isinstance(leaf, PlainLeaf) or leaf is None:
        vals = chunk.values_flat(attr)
        result = chunk.nonempty.reshape(-1) & (vals >= a_lo) & (vals <= a_hi)
        if stats is not None:
            stats.candidate_checks += chunk.nonempty_count
    else:
        result, cand = leaf.range_query_dense(
            a_lo, a_hi, chunk.nonempty.reshape(-1), stats
        )
        if cand is not None:
            pos = np.flatnonzero(cand)
            vals = chunk.values_flat(attr)[pos]
            ok = (vals >= a_lo) & (vals <= a_hi)
            if stats is not None:
                stats.candidate_checks += pos.size
            result[pos[ok]] = True
    for d, rng in enumerate(dim_ranges):
        if rng is None:
            continue
        lo, hi = rng
        if lo <= 0 and hi >= chunk.shape[d] - 1:
            continue
        result &= store.slab_dense(chunk.shape, d, max(lo, 0), min(hi, chunk.shape[d] - 1))
    return BitVector.from_dense(result)


# ---------------------------------------------------------------------------
# ingestion


def write_raw(header_path, schema: ArraySchema, data: dict, origin=None) -> None:
    """Write one block of dense row-major data plus its sidecar header.

    If the header already exists, the block is appended and extents grow to
    cover it; otherwise a fresh single-block header is written.
    """
    header_path = Path(header_path)
    origin = tuple(int(o) for o in (origin or (0,) * schema.ndim))
    shape = tuple(next(iter(data.values())).shape)
    stem = header_path.stem + "".join(f"_{o}" for o in origin)
    files = {}
    for name, typ in schema.attributes:
        fname = f"{stem}.{name}.bin"
        arr = np.ascontiguousarray(data[name], dtype=_DTYPES[typ])
        if tuple(arr.shape) != shape:
            raise InputError("all attribute blocks must share one shape")
        arr.astype("<f8" if typ == "float64" else "<i8").tofile(header_path.parent / fname)
        files[name] = fname
    block = {"origin": list(origin), "shape": list(shape), "files": files}
    if header_path.exists():
        head = json.loads(header_path.read_text())
        head["blocks"].append(block)
        head["dims"] = [
            [n, max(e, o + s)]
            for (n, e), o, s in zip(
                ((n, e) for n, e in head["dims"]), origin, shape
            )
        ]
    else:
        empty = {
            name: (None if typ == "float64" and np.isnan(schema.empty_value(name))
                   else schema.empty_value(name))
            for name, typ in schema.attributes
        }
        head = {
            "format": "arraybit-raw-v1",
            "dims": [[n, max(e, o + s)] for (n, e), o, s in zip(schema.dims, origin, shape)],
            "attributes": [list(a) for a in schema.attributes],
            "empty": empty,
            "chunk_shape": list(schema.chunk_shape),
            "blocks": [block],
        }
    header_path.write_text(json.dumps(head, indent=1))


def read_header(header_path) -> tuple:
    """Parse a sidecar header; returns (schema, blocks)."""
    header_path = Path(header_path)
    try:
        head = json.loads(header_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read header {header_path}: {exc}") from exc
    if head.get("format") != "arraybit-raw-v1":
        raise DataError(f"{header_path} is not an arraybit raw header")
    empty = {
        k: (float("nan") if v is None else v) for k, v in head.get("empty", {}).items()
    }
    schema = ArraySchema(
        tuple((n, e) for n, e in head["dims"]),
        tuple((n, t) for n, t in head["attributes"]),
        tuple(head["chunk_shape"]),
        empty,
    )
    return schema, head["blocks"]


def load_store(header_path, chunk_shape=None) -> ChunkStore:
    """Load every block referenced by a header into one chunked store."""
    header_path = Path(header_path)
    schema, blocks = read_header(header_path)
    if chunk_shape is not None:
        schema = ArraySchema(schema.dims, schema.attributes, chunk_shape, schema.empty_values)
    data = {
        name: np.full(schema.shape, schema.empty_value(name), _DTYPES[typ])
        for name, typ in schema.attributes
    }
    for block in blocks:
        origin = tuple(block.get("origin", (0,) * schema.ndim))
        shape = tuple(block["shape"])
        sl = tuple(slice(o, o + s) for o, s in zip(origin, shape))
        for name, typ in schema.attributes:
            path = header_path.parent / block["files"][name]
            try:
                raw = np.fromfile(path, dtype="<f8" if typ == "float64" else "<i8")
            except OSError as exc:
                raise DataError(f"cannot read {path}: {exc}") from exc
            if raw.size != int(np.prod(shape)):
                raise DataError(f"{path}: expected {np.prod(shape)} cells, got {raw.size}")
            data[name][sl] = raw.reshape(shape)
    return ChunkStore.from_dense(schema, data)


def ingest_csv(path, schema: ArraySchema) -> ChunkStore:
    """Load `d_1,...,d_n,a_1,...,a_m` lines (header row optional)."""
    path = Path(path)
    ncoords = schema.ndim
    names = [n for n, _ in schema.attributes]
    data = {
        name: np.full(schema.shape, schema.empty_value(name), _DTYPES[typ])
        for name, typ in schema.attributes
    }
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and not _is_number(parts[0]):
                continue  # header row
            if len(parts) != ncoords + len(names):
                raise DataError(f"{path}:{lineno}: expected {ncoords + len(names)} fields")
            try:
                cell = tuple(int(p) for p in parts[:ncoords])
                for name, raw in zip(names, parts[ncoords:]):
                    if raw != "":
                        data[name][cell] = float(raw)
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return ChunkStore.from_dense(schema, data)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
