"""Run-length compressed bitvectors with word-aligned logical operations.

Physical layout: a vector is a sequence of 64-bit words over 63-bit bit
groups.  Bit index i is the i-th least significant logical bit; group
g = i // 63 holds it at payload bit i % 63.

  literal word: bit 63 clear, bits 0..62 hold one group verbatim
  fill word:    bit 63 set, bit 62 is the fill value, bits 0..61 count
                how many identical groups the word stands for

Canonical form is enforced after every operation: fills are maximal, never
empty and never of length 1 (a single uniform group is stored as a
literal).  Two vectors are therefore equal iff their word sequences are
equal.  Logical operations walk the compressed runs of both operands and
never expand fills.

Serialized form (``to_bytes``): little-endian header
``{logical_length: u64, word_count: u64}`` followed by the words.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import InputError

GROUP_BITS = 63
_ONES = np.uint64((1 << 63) - 1)  # all 63 payload bits set
_FILL_FLAG = np.uint64(1 << 63)
_FILL_VALUE = np.uint64(1 << 62)
_LEN_MASK = np.uint64((1 << 62) - 1)

# byte offset / bit shift of each of the 8 groups inside a 63-byte block
_LANES = [divmod(GROUP_BITS * k, 8) for k in range(8)]

_OPS = {
    "and": np.bitwise_and,
    "or": np.bitwise_or,
    "xor": np.bitwise_xor,
}


def _pack_groups(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean array into 63-bit groups (uint64, high bit clear).

    Works blockwise: 63 bytes of little-endian packed bits hold exactly
    eight 63-bit groups, so each group lane is a strided unaligned load.
    """
    n = bits.size
    ngroups = -(-n // GROUP_BITS)
    if ngroups == 0:
        return np.empty(0, np.uint64)
    packed = np.packbits(np.ascontiguousarray(bits), bitorder="little")
    nblocks = -(-ngroups // 8)
    buf = np.zeros(nblocks * 63 + 9, np.uint8)
    buf[: packed.size] = packed
    out = np.empty(nblocks * 8, np.uint64)
    starts = np.arange(nblocks) * 63
    for k, (off, shift) in enumerate(_LANES):
        idx = (starts + off)[:, None] + np.arange(8)
        lane = buf[idx].view("<u8").ravel() >> np.uint64(shift)
        if shift > 1:
            spill = buf[starts + off + 8].astype(np.uint64)
            lane |= spill << np.uint64(64 - shift)
        out[k::8] = lane & _ONES
    return out[:ngroups]


def _unpack_groups(groups: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of :func:`_pack_groups`; returns a boolean array of nbits."""
    if nbits == 0:
        return np.empty(0, bool)
    ngroups = groups.size
    nblocks = -(-ngroups // 8)
    padded = np.zeros(nblocks * 8, np.uint64)
    padded[:ngroups] = groups
    buf = np.zeros(nblocks * 63 + 9, np.uint8)
    starts = np.arange(nblocks) * 63
    for k, (off, shift) in enumerate(_LANES):
        lane = padded[k::8]
        lo = (lane << np.uint64(shift)).astype("<u8")
        idx = (starts + off)[:, None] + np.arange(8)
        buf[idx] |= lo.view(np.uint8).reshape(-1, 8)
        if shift > 1:
            buf[starts + off + 8] |= (lane >> np.uint64(64 - shift)).astype(np.uint8)
    nbytes = -(-nbits // 8)
    return np.unpackbits(buf[:nbytes], count=nbits, bitorder="little").astype(bool)


def _compress_segments(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Build canonical words from (payload, group-run-length) segments."""
    if values.size == 0:
        return np.empty(0, np.uint64)
    changed = np.empty(values.size, bool)
    changed[0] = True
    np.not_equal(values[1:], values[:-1], out=changed[1:])
    starts = np.flatnonzero(changed)
    run_vals = values[starts]
    run_lens = np.add.reduceat(lengths, starts)
    uniform = (run_vals == 0) | (run_vals == _ONES)
    is_fill = uniform & (run_lens >= 2)
    counts = np.where(is_fill, 1, run_lens)
    words = np.repeat(run_vals, counts)
    offsets = np.cumsum(counts) - counts
    fills = _FILL_FLAG | np.where(run_vals == _ONES, _FILL_VALUE, np.uint64(0))
    fills = fills | run_lens.astype(np.uint64)
    words[offsets[is_fill]] = fills[is_fill]
    return words


def _decode(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split words into (group counts, per-run payload) without expanding."""
    is_fill = words >= _FILL_FLAG
    counts = np.where(is_fill, (words & _LEN_MASK).astype(np.int64), 1)
    payload = np.where(
        is_fill, np.where(words & _FILL_VALUE, _ONES, np.uint64(0)), words
    )
    return counts, payload


class BitVector:
    """Immutable compressed bitvector; all operations return new vectors."""

    __slots__ = ("_n", "_words")

    def __init__(self, length: int, words: np.ndarray):
        self._n = int(length)
        self._words = words

    # -- construction -------------------------------------------------

    @classmethod
    def zeros(cls, length: int) -> "BitVector":
        ngroups = -(-length // GROUP_BITS)
        if ngroups == 0:
            words = np.empty(0, np.uint64)
        elif ngroups == 1:
            words = np.zeros(1, np.uint64)
        else:
            words = np.array([_FILL_FLAG | np.uint64(ngroups)], np.uint64)
        return cls(length, words)

    @classmethod
    def ones(cls, length: int) -> "BitVector":
        ngroups, rest = divmod(length, GROUP_BITS)
        words = []
        if ngroups == 1:
            words.append(_ONES)
        elif ngroups > 1:
            words.append(_FILL_FLAG | _FILL_VALUE | np.uint64(ngroups))
        if rest:
            words.append(np.uint64((1 << rest) - 1))
        return cls(length, np.array(words, np.uint64))

    @classmethod
    def from_dense(cls, bits: np.ndarray) -> "BitVector":
        bits = np.asarray(bits, bool)
        if bits.ndim != 1:
            raise InputError("from_dense expects a 1-d boolean array")
        groups = _pack_groups(bits)
        lens = np.ones(groups.size, np.int64)
        return cls(bits.size, _compress_segments(groups, lens))

    @classmethod
    def from_positions(cls, positions: Iterable[int], length: int) -> "BitVector":
        pos = np.asarray(list(positions) if not hasattr(positions, "__len__") else positions,
                         dtype=np.int64).ravel()
        if pos.size:
            if pos.min() < 0:
                raise InputError("bit position is negative")
            if pos.max() >= length:
                raise InputError(
                    f"bit position {int(pos.max())} out of range for length {length}"
                )
        dense = np.zeros(length, bool)
        dense[pos] = True
        return cls.from_dense(dense)

    # -- introspection ------------------------------------------------

    @property
    def logical_length(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    @property
    def word_count(self) -> int:
        return self._words.size

    def to_dense(self) -> np.ndarray:
        counts, payload = _decode(self._words)
        groups = np.repeat(payload, counts)
        return _unpack_groups(groups, self._n)

    def to_positions(self) -> np.ndarray:
        return np.flatnonzero(self.to_dense()).astype(np.int64)

    def count_ones(self) -> int:
        counts, payload = _decode(self._words)
        return int(np.bitwise_count(payload).astype(np.int64) @ counts)

    def any(self) -> bool:
        counts, payload = _decode(self._words)
        return bool((payload != 0).any())

    # -- operators ----------------------------------------------------

    def __and__(self, other: "BitVector") -> "BitVector":
        return logical("and", self, other)

    def __or__(self, other: "BitVector") -> "BitVector":
        return logical("or", self, other)

    def __xor__(self, other: "BitVector") -> "BitVector":
        return logical("xor", self, other)

    def andnot(self, other: "BitVector") -> "BitVector":
        return logical("andnot", self, other)

    def __invert__(self) -> "BitVector":
        return complement(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self._n == other._n and np.array_equal(self._words, other._words)

    def __hash__(self) -> int:
        return hash((self._n, self._words.tobytes()))

    def __repr__(self) -> str:
        return f"BitVector(len={self._n}, words={self.word_count}, ones={self.count_ones()})"

    # -- serialization ------------------------------------------------

    def to_bytes(self) -> bytes:
        header = np.array([self._n, self._words.size], "<u8").tobytes()
        return header + self._words.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["BitVector", int]:
        n, nwords = np.frombuffer(data, "<u8", count=2, offset=offset)
        words = np.frombuffer(data, "<u8", count=int(nwords), offset=offset + 16)
        return cls(int(n), words.astype(np.uint64)), offset + 16 + int(nwords) * 8


def logical(op: str, a: BitVector, b: BitVector) -> BitVector:
    """Apply a bitwise op to two equal-length vectors, run by run."""
    if a._n != b._n:
        raise InputError(f"length mismatch: {a._n} != {b._n}")
    if a._n == 0:
        return BitVector(0, np.empty(0, np.uint64))
    counts_a, pay_a = _decode(a._words)
    counts_b, pay_b = _decode(b._words)
    ends_a = np.cumsum(counts_a)
    ends_b = np.cumsum(counts_b)
    ends = np.union1d(ends_a, ends_b)
    va = pay_a[np.searchsorted(ends_a, ends, side="left")]
    vb = pay_b[np.searchsorted(ends_b, ends, side="left")]
    if op == "andnot":
        merged = va & (vb ^ _ONES)
    else:
        try:
            merged = _OPS[op](va, vb)
        except KeyError:
            raise InputError(f"unknown logical op: {op!r}") from None
    lens = np.diff(ends, prepend=0)
    return BitVector(a._n, _compress_segments(merged, lens))


def complement(a: BitVector) -> BitVector:
    """Flip every bit below the logical length; padding bits stay zero."""
    return logical("xor", a, BitVector.ones(a._n))


def count_ones(a: BitVector) -> int:
    return a.count_ones()
