"""Seeded binary fuse filters over (position, cluster id) keys.

Keys are hashed with a vectorised MurmurHash3 x64 (128-bit output) over the
12-byte serialisation ``position:u64le || cluster_id:u32le``, using the
64-bit filter seed for both lanes.  The first lane picks the ``arity``
fingerprint slots, the second lane and the first lane's folded halves give the
``bits``-wide fingerprint.

Construction follows the segmented layout of binary fuse filters: every key
touches one slot in each of ``arity`` consecutive segments, and the array is
filled by peeling singleton slots.  Peeling is done in vectorised rounds.

Wire layout (all integers little-endian)::

    offset size field
    0      4    magic  b"BFF1"
    4      1    arity
    5      1    bits per entry
    6      2    reserved (zero)
    8      4    seed-rotation attempt counter
    12     8    key count
    20     4    segment length
    24     4    segment count
    28     8    array length t
    36     ...  t fingerprints, packed as uint8/uint16/uint32 (LE)

The seed itself is never serialised.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionFailed, DecodeError, InvalidArgument

MAX_ATTEMPTS = 32
UNKNOWN = -1

_MASK64 = 0xFFFFFFFFFFFFFFFF
_C1 = np.uint64(0x87C37B91114253D5)
_C2 = np.uint64(0x4CF5AD432745937F)
_F1 = np.uint64(0xFF51AFD7ED558CCD)
_F2 = np.uint64(0xC4CEB9FE1A85EC53)
_GOLDEN = 0x9E3779B97F4A7C15
_DTYPES = {8: np.uint8, 16: np.uint16, 32: np.uint32}

_HEADER = struct.Struct("<4sBBHIQIIQ")
_MAGIC = b"BFF1"


def _rotl(x, r):
    return (x << np.uint64(r)) | (x >> np.uint64(64 - r))


def _fmix(h):
    h = h ^ (h >> np.uint64(33))
    h = h * _F1
    h = h ^ (h >> np.uint64(33))
    h = h * _F2
    return h ^ (h >> np.uint64(33))


def _fmix_int(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK64
    return h ^ (h >> 33)


def murmur3_keys(positions, cluster_ids, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """MurmurHash3 x64-128 of each serialised key; returns the two 64-bit lanes."""
    pos = np.asarray(positions).astype(np.uint64)
    cid = np.asarray(cluster_ids).astype(np.uint64) & np.uint64(0xFFFFFFFF)
    pos, cid = np.broadcast_arrays(pos, cid)
    s = np.uint64(int(seed) & _MASK64)
    with np.errstate(over="ignore"):
        # 12-byte input: no full 16-byte block, tail bytes 8..11 feed k2, 0..7 feed k1
        k2 = _rotl(cid * _C2, 33) * _C1
        h2 = np.full(pos.shape, s, dtype=np.uint64) ^ k2
        k1 = _rotl(pos * _C1, 31) * _C2
        h1 = np.full(pos.shape, s, dtype=np.uint64) ^ k1
        length = np.uint64(12)
        h1 = h1 ^ length
        h2 = h2 ^ length
        h1 = h1 + h2
        h2 = h2 + h1
        h1 = _fmix(h1)
        h2 = _fmix(h2)
        h1 = h1 + h2
        h2 = h2 + h1
    return h1, h2


def _fingerprint_from(h1: np.ndarray, h2: np.ndarray, bits: int) -> np.ndarray:
    fp = (h1 ^ (h1 >> np.uint64(32)) ^ _rotl(h2, 17)) & np.uint64((1 << bits) - 1)
    return fp.astype(_DTYPES[bits])


def fingerprint(key: tuple[int, int], seed: int, bits: int = 8) -> int:
    """The ``bits``-wide fingerprint g(key) under ``seed``."""
    _check_bits(bits)
    h1, h2 = murmur3_keys([key[0]], [key[1]], seed)
    return int(_fingerprint_from(h1, h2, bits)[0])


def _check_bits(bits):
    if bits not in _DTYPES:
        raise InvalidArgument(f"bits per entry must be one of {sorted(_DTYPES)}, got {bits}")


def rotated_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return int(seed) & _MASK64
    return _fmix_int((int(seed) ^ ((attempt * _GOLDEN) & _MASK64)) & _MASK64)


def _layout(arity: int, size: int) -> tuple[int, int, int]:
    """Segment length, segment count and array length for ``size`` keys."""
    if arity == 3:
        seg_len = 1 << int(math.floor(math.log(max(size, 2)) / math.log(3.33) + 2.25))
        factor = max(1.125, 0.875 + 0.25 * math.log(1e6) / math.log(max(size, 2)))
    else:
        seg_len = 1 << int(math.floor(math.log(max(size, 2)) / math.log(2.91) - 0.5))
        factor = max(1.075, 0.77 + 0.305 * math.log(6e5) / math.log(max(size, 2)))
    seg_len = min(max(seg_len, 4), 1 << 18)
    capacity = int(round(size * factor))
    seg_count = max(1, -(-capacity // seg_len) - (arity - 1))
    return seg_len, seg_count, (seg_count + arity - 1) * seg_len


def _mulhi32(a: np.ndarray, b: int) -> np.ndarray:
    # high 64 bits of a * b for b < 2**32
    bb = np.uint64(b)
    lo = (a & np.uint64(0xFFFFFFFF)) * bb
    return ((a >> np.uint64(32)) * bb + (lo >> np.uint64(32))) >> np.uint64(32)


def _locations(h1, h2, arity, seg_len, seg_count) -> np.ndarray:
    mask = np.uint64(seg_len - 1)
    h0 = _mulhi32(h1, seg_count * seg_len)
    locs = np.empty(h1.shape + (arity,), dtype=np.int64)
    locs[..., 0] = h0.astype(np.int64)
    for j in range(1, arity):
        off = (h2 >> np.uint64(18 * (j - 1))) & mask
        locs[..., j] = ((h0 + np.uint64(j * seg_len)) ^ off).astype(np.int64)
    return locs


@dataclass(frozen=True, eq=False)
class FuseFilter:
    fingerprints: np.ndarray
    arity: int
    bits_per_entry: int
    seed: int
    segment_length: int
    segment_count: int
    key_count: int
    attempt: int = 0

    @property
    def size(self) -> int:
        return int(self.fingerprints.size)

    @property
    def hash_seed(self) -> int:
        return rotated_seed(self.seed, self.attempt)

    @property
    def total_bits(self) -> int:
        return self.size * self.bits_per_entry

    @property
    def bits_per_key(self) -> float:
        return self.total_bits / self.key_count

    def with_seed(self, seed: int) -> "FuseFilter":
        """Same fingerprint array, queried under a different seed."""
        return FuseFilter(self.fingerprints, self.arity, self.bits_per_entry, seed,
                          self.segment_length, self.segment_count, self.key_count, self.attempt)

    def contains(self, positions, cluster_ids) -> np.ndarray:
        """Vectorised membership check: XOR of the slot values equals the fingerprint."""
        h1, h2 = murmur3_keys(positions, cluster_ids, self.hash_seed)
        locs = _locations(h1, h2, self.arity, self.segment_length, self.segment_count)
        acc = self.fingerprints[locs[..., 0]].copy()
        for j in range(1, self.arity):
            acc ^= self.fingerprints[locs[..., j]]
        return acc == _fingerprint_from(h1, h2, self.bits_per_entry)


def member(filt: FuseFilter, key: tuple[int, int]) -> bool:
    return bool(filt.contains([key[0]], [key[1]])[0])


def _peel(locs: np.ndarray, size: int):
    n, arity = locs.shape
    flat = locs.ravel()
    owners = np.repeat(np.arange(n, dtype=np.int64), arity)
    count = np.bincount(flat, minlength=size)
    xor_keys = np.zeros(size, dtype=np.int64)
    np.bitwise_xor.at(xor_keys, flat, owners)

    rounds = []
    peeled = 0
    cand = np.flatnonzero(count == 1)
    while cand.size:
        keys, first = np.unique(xor_keys[cand], return_index=True)
        slots = cand[first]
        rounds.append((keys, slots))
        peeled += keys.size
        touched = locs[keys].ravel()
        np.subtract.at(count, touched, 1)
        np.bitwise_xor.at(xor_keys, touched, np.repeat(keys, arity))
        cand = np.unique(touched)
        cand = cand[count[cand] == 1]
    return rounds if peeled == n else None


def build_filter(keys, arity: int = 4, bits_per_entry: int = 8, seed: int = 0) -> FuseFilter:
    """Build a filter holding ``keys``, an iterable of ``(position, cluster_id)``.

    Also accepts a ``(positions, cluster_ids)`` pair of equal-length arrays.
    Each position may appear at most once.
    """
    if arity not in (3, 4):
        raise InvalidArgument(f"arity must be 3 or 4, got {arity}")
    _check_bits(bits_per_entry)
    positions, cluster_ids = _split_keys(keys)
    n = positions.size
    if n == 0:
        raise InvalidArgument("cannot build a filter over an empty key set")
    if np.unique(positions).size != n:
        raise InvalidArgument("duplicate position in key set")

    seg_len, seg_count, size = _layout(arity, n)
    dtype = _DTYPES[bits_per_entry]
    for attempt in range(MAX_ATTEMPTS):
        h1, h2 = murmur3_keys(positions, cluster_ids, rotated_seed(seed, attempt))
        locs = _locations(h1, h2, arity, seg_len, seg_count)
        rounds = _peel(locs, size)
        if rounds is None:
            continue
        fps = _fingerprint_from(h1, h2, bits_per_entry)
        table = np.zeros(size, dtype=dtype)
        for ks, slots in reversed(rounds):
            v = fps[ks].copy()
            for j in range(arity):
                v ^= table[locs[ks, j]]
            table[slots] = v
        return FuseFilter(table, arity, bits_per_entry, int(seed) & _MASK64,
                          seg_len, seg_count, n, attempt)
    raise ConstructionFailed(f"no peelable layout for {n} keys after {MAX_ATTEMPTS} seeds")


def build_from_mapping(mapping, arity: int = 4, bits_per_entry: int = 8, seed: int = 0) -> FuseFilter:
    """Filter over U = {(i, mapping[i])}."""
    mapping = np.asarray(mapping, dtype=np.int64)
    return build_filter((np.arange(mapping.size), mapping), arity, bits_per_entry, seed)


def _split_keys(keys):
    if isinstance(keys, tuple) and len(keys) == 2 and np.ndim(keys[0]) == 1:
        positions = np.asarray(keys[0], dtype=np.int64)
        cluster_ids = np.asarray(keys[1], dtype=np.int64)
    else:
        arr = np.asarray(sorted(keys) if isinstance(keys, (set, frozenset)) else list(keys),
                         dtype=np.int64).reshape(-1, 2)
        positions, cluster_ids = arr[:, 0], arr[:, 1]
    if positions.shape != cluster_ids.shape:
        raise InvalidArgument("positions and cluster ids differ in length")
    if positions.size and (positions.min() < 0 or cluster_ids.min() < 0):
        raise InvalidArgument("key components must be non-negative")
    return positions, cluster_ids


def reconstruct_mapping(filt: FuseFilter, d: int, kappa: int, seed: int | None = None,
                        chunk: int = 4096) -> np.ndarray:
    """For every position, the lowest cluster id whose key is a member.

    Positions without any member key get ``UNKNOWN`` (-1).  ``seed`` overrides
    the filter's own seed, which is how a party without the true seed queries.
    """
    if seed is not None:
        filt = filt.with_seed(seed)
    out = np.empty(d, dtype=np.int64)
    cids = np.arange(kappa, dtype=np.int64)
    for start in range(0, d, chunk):
        pos = np.arange(start, min(start + chunk, d), dtype=np.int64)
        hits = filt.contains(pos[:, None], cids[None, :])
        first = np.argmax(hits, axis=1)
        out[start:start + pos.size] = np.where(hits.any(axis=1), first, UNKNOWN)
    return out


def serialize_filter(filt: FuseFilter) -> bytes:
    header = _HEADER.pack(_MAGIC, filt.arity, filt.bits_per_entry, 0, filt.attempt,
                          filt.key_count, filt.segment_length, filt.segment_count, filt.size)
    payload = filt.fingerprints.astype(np.dtype(_DTYPES[filt.bits_per_entry]).newbyteorder("<"),
                                       copy=False).tobytes()
    return header + payload


def serialized_size(filt: FuseFilter) -> int:
    return _HEADER.size + (filt.size * filt.bits_per_entry + 7) // 8


def deserialize_filter(data: bytes, seed: int = 0) -> FuseFilter:
    """Inverse of :func:`serialize_filter`; the seed comes out of band."""
    if len(data) < _HEADER.size:
        raise DecodeError("truncated filter header")
    magic, arity, bits, _res, attempt, key_count, seg_len, seg_count, size = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DecodeError("bad filter magic")
    if arity not in (3, 4) or bits not in _DTYPES:
        raise DecodeError(f"unsupported filter parameters arity={arity} bits={bits}")
    if seg_len == 0 or seg_len & (seg_len - 1) or size != (seg_count + arity - 1) * seg_len:
        raise DecodeError("inconsistent segment layout")
    if attempt >= MAX_ATTEMPTS or key_count == 0:
        raise DecodeError("invalid attempt counter or key count")
    need = (size * bits + 7) // 8
    if len(data) - _HEADER.size != need:
        raise DecodeError(f"payload is {len(data) - _HEADER.size} bytes, expected {need}")
    dt = np.dtype(_DTYPES[bits]).newbyteorder("<")
    table = np.frombuffer(data, dtype=dt, offset=_HEADER.size, count=size).astype(_DTYPES[bits])
    return FuseFilter(table, arity, bits, int(seed) & _MASK64, seg_len, seg_count, key_count, attempt)
