"""One EncCluster round: client upload preparation and server-side secure aggregation.

Client: cluster the trained weights, quantize the centroids (pre-scaled by the
client's sample count), encrypt them under the round label, and encode the
cluster-weight mapping in a seeded fuse filter (or, for the ``huffman``
variant, a plaintext Huffman code).

Server: recover every client's mapping from its filter, substitute for each
weight the encrypted centroid that weight belongs to, combine the key shares
and decrypt the weighted sum weight by weight, then rescale.

RoundMessage wire layout (little-endian)::

    offset  size  field
    0       4     magic b"ERM1"
    4       2     protocol version (1)
    6       1     mapping encoding (0 = fuse filter, 1 = Huffman)
    7       1     reserved (0)
    8       4     client_id
    12      4     round
    16      4     kappa
    20      8     d
    28      8     sample_count
    36      4+n   ciphertext bytes (u32 length prefix)
    ..      4+n   mapping bytes
    ..      4+n   partial-key bytes
"""
from __future__ import annotations

import csv
import heapq
import io
import struct
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fuse_filter as ff
from .dmcfe import scheme
from .dmcfe.bsgs import BSGS
from .errors import (DecodeError, InvalidArgument, LabelMismatch, PlaintextBoundExceeded)
from .weight_clustering import ClusteredModel, as_weight_vector, cluster_weights

PROTOCOL_VERSION = 1
MAPPING_FILTER = 0
MAPPING_HUFFMAN = 1
_HEADER = struct.Struct("<4sHBBIIIQQ")
_MAGIC = b"ERM1"


# ------------------------------------------------------------------ quantizer


@dataclass(frozen=True)
class FixedPointCodec:
    """Symmetric fixed point with ``fractional_bits`` bits after the binary point.

    ``encode`` pre-scales by the sample count and saturates at ``slot_bound``.
    """
    fractional_bits: int = 16
    slot_bound: int = 1 << 36

    @property
    def scale(self) -> int:
        return 1 << self.fractional_bits

    def aggregate_bound(self, n: int) -> int:
        return int(n) * self.slot_bound

    def encode(self, centroids, sample_count: int = 1) -> tuple[list[int], int]:
        """Integer plaintexts for ``centroids * sample_count`` plus the number of clamped slots."""
        z = np.asarray(centroids, dtype=np.float64)
        raw = np.rint(z * float(sample_count) * self.scale)
        clipped = np.clip(raw, -self.slot_bound, self.slot_bound)
        saturated = int(np.count_nonzero(clipped != raw))
        return [int(v) for v in clipped], saturated

    def decode(self, values, total_samples: int = 1) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) / (float(total_samples) * self.scale)

    def hint(self, weights, total_samples: int) -> np.ndarray:
        """Expected aggregate integers if the global model stayed at ``weights``."""
        return np.rint(np.asarray(weights, dtype=np.float64) * float(total_samples) * self.scale)


@dataclass(frozen=True)
class FilterParams:
    arity: int = 4
    bits_per_entry: int = 8


# ------------------------------------------------------------ Huffman mapping


def _huffman_lengths(freqs: np.ndarray) -> np.ndarray:
    symbols = [int(s) for s in np.flatnonzero(freqs)]
    lengths = np.zeros(freqs.size, dtype=np.int64)
    if len(symbols) == 1:
        lengths[symbols[0]] = 1
        return lengths
    heap = [(int(freqs[s]), s, (s,)) for s in symbols]
    heapq.heapify(heap)
    while len(heap) > 1:
        fa, ta, a = heapq.heappop(heap)
        fb, tb, b = heapq.heappop(heap)
        for s in a + b:
            lengths[s] += 1
        heapq.heappush(heap, (fa + fb, min(ta, tb), a + b))
    return lengths


def _canonical_codes(lengths: np.ndarray) -> np.ndarray:
    codes = np.zeros(lengths.size, dtype=np.int64)
    order = sorted((int(l), s) for s, l in enumerate(lengths) if l > 0)
    code = 0
    prev = order[0][0] if order else 0
    for k, (l, s) in enumerate(order):
        if k:
            code = (code + 1) << (l - prev)
        codes[s] = code
        prev = l
    return codes


def huffman_encode_mapping(mapping, kappa: int) -> bytes:
    """Canonical Huffman code of the cluster indices.

    Layout: u32 kappa, u64 d, kappa code-length bytes, packed bit stream (MSB first).
    """
    p = np.asarray(mapping, dtype=np.int64)
    if p.size and (p.min() < 0 or p.max() >= kappa):
        raise InvalidArgument("mapping entries must lie in [0, kappa)")
    freqs = np.bincount(p, minlength=kappa)
    lengths = _huffman_lengths(freqs)
    if lengths.max(initial=0) > 255:
        raise InvalidArgument("code length overflow")
    codes = _canonical_codes(lengths)
    L = lengths[p]
    C = codes[p]
    ends = np.cumsum(L)
    starts = ends - L
    bits = np.zeros(int(ends[-1]) if p.size else 0, dtype=np.uint8)
    for b in range(int(L.max(initial=0))):
        sel = L > b
        bits[starts[sel] + b] = (C[sel] >> (L[sel] - 1 - b)) & 1
    head = struct.pack("<IQ", kappa, p.size) + lengths.astype(np.uint8).tobytes()
    return head + np.packbits(bits).tobytes()


def huffman_decode_mapping(data: bytes) -> np.ndarray:
    try:
        kappa, d = struct.unpack_from("<IQ", data, 0)
    except struct.error:
        raise DecodeError("truncated Huffman header") from None
    off = 12
    if len(data) < off + kappa:
        raise DecodeError("truncated Huffman code lengths")
    lengths = np.frombuffer(data, dtype=np.uint8, count=kappa, offset=off).astype(np.int64)
    off += kappa
    codes = _canonical_codes(lengths)
    table = {(int(lengths[s]), int(codes[s])): s for s in range(kappa) if lengths[s]}
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=off))
    out = np.empty(d, dtype=np.int64)
    pos = 0
    nbits = bits.size
    bit_list = bits.tolist()
    for k in range(d):
        code = 0
        length = 0
        while True:
            if pos >= nbits or length > 255:
                raise DecodeError("Huffman stream exhausted")
            code = (code << 1) | bit_list[pos]
            pos += 1
            length += 1
            sym = table.get((length, code))
            if sym is not None:
                out[k] = sym
                break
    return out


# -------------------------------------------------------------- round message


@dataclass(frozen=True)
class RoundMessage:
    client_id: int
    round: int
    kappa: int
    d: int
    sample_count: int
    ciphertext: bytes = field(repr=False)
    mapping: bytes = field(repr=False)
    partial_key: bytes = field(repr=False)
    mapping_kind: int = MAPPING_FILTER

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(_MAGIC, PROTOCOL_VERSION, self.mapping_kind, 0, self.client_id,
                            self.round, self.kappa, self.d, self.sample_count)
        body = b"".join(struct.pack("<I", len(x)) + x
                        for x in (self.ciphertext, self.mapping, self.partial_key))
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "RoundMessage":
        data = bytes(data)
        if len(data) < _HEADER.size:
            raise DecodeError("truncated message header")
        magic, ver, kind, _, cid, rnd, kappa, d, count = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC or ver != PROTOCOL_VERSION or kind not in (MAPPING_FILTER, MAPPING_HUFFMAN):
            raise DecodeError("unsupported message header")
        off = _HEADER.size
        parts = []
        for _ in range(3):
            if len(data) < off + 4:
                raise DecodeError("truncated length prefix")
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if len(data) < off + n:
                raise DecodeError("truncated message body")
            parts.append(data[off:off + n])
            off += n
        if off != len(data):
            raise DecodeError("trailing bytes after message")
        return cls(cid, rnd, kappa, d, count, *parts, mapping_kind=kind)

    @property
    def header_bytes(self) -> int:
        return _HEADER.size + 12


@dataclass
class ClientUpdateInfo:
    model: ClusteredModel
    plaintexts: list
    saturated: int
    cluster_ms: float
    encrypt_ms: float
    filter_ms: float
    key_ms: float
    filter_attempt: int = 0


def client_prepare_update(weights, kappa: int, sample_count: int, round_: int,
                          keypair: scheme.ClientKeyPair, codec: FixedPointCodec,
                          filter_params: FilterParams, client_seed: int, y: Sequence[int] | None = None,
                          cluster_seed: int = 0, mapping_mode: str = "filter",
                          weighted: bool = True, model: ClusteredModel | None = None):
    """Build one client's RoundMessage; returns ``(message, info)``.

    ``y`` is the round's aggregation function (default: every client weighted 1);
    ``model`` skips clustering when the caller already holds one.
    """
    w = as_weight_vector(weights)
    sample_count = int(sample_count)
    if sample_count < 1:
        raise InvalidArgument("sample_count must be >= 1")
    pp = keypair.pp
    y = tuple(y) if y is not None else (1,) * pp.n

    t0 = time.perf_counter()
    if model is None:
        model = cluster_weights(w, kappa, cluster_seed)
    elif model.d != w.size:
        raise InvalidArgument("model dimension differs from weights")
    t1 = time.perf_counter()
    plain, saturated = codec.encode(model.centroids, sample_count if weighted else 1)
    ct = scheme.encrypt(keypair, plain, round_, bound=codec.slot_bound)
    t2 = time.perf_counter()
    if mapping_mode == "filter":
        filt = ff.build_from_mapping(model.mapping, filter_params.arity, filter_params.bits_per_entry,
                                     client_seed)
        mapping_bytes = ff.serialize_filter(filt)
        kind, attempt = MAPPING_FILTER, filt.attempt
    elif mapping_mode == "huffman":
        mapping_bytes = huffman_encode_mapping(model.mapping, model.kappa)
        kind, attempt = MAPPING_HUFFMAN, 0
    else:
        raise InvalidArgument(f"unknown mapping mode {mapping_mode!r}")
    t3 = time.perf_counter()
    pk = scheme.derive_partial_key(keypair, y, round_, min_support=2)
    t4 = time.perf_counter()
    msg = RoundMessage(keypair.client_id, int(round_), model.kappa, model.d, sample_count,
                       scheme.ciphertext_to_bytes(ct), mapping_bytes, scheme.partial_key_to_bytes(pk), kind)
    info = ClientUpdateInfo(model, plain, saturated, 1e3 * (t1 - t0), 1e3 * (t2 - t1),
                            1e3 * (t3 - t2), 1e3 * (t4 - t3), attempt)
    return msg, info


reconstruct_mapping = ff.reconstruct_mapping


def decode_mapping(msg: RoundMessage, seed: int | None) -> np.ndarray:
    if msg.mapping_kind == MAPPING_HUFFMAN:
        return huffman_decode_mapping(msg.mapping)
    filt = ff.deserialize_filter(msg.mapping, seed if seed is not None else 0)
    if filt.key_count != msg.d:
        raise DecodeError("filter key count differs from d")
    return ff.reconstruct_mapping(filt, msg.d, msg.kappa)


# ---------------------------------------------------------------- aggregation


@dataclass
class AggregateResult:
    weights: np.ndarray
    mappings: dict
    substitute_failures: int
    decrypted: np.ndarray  # raw integer aggregates
    mapping_ms: float
    decrypt_ms: float
    dlog_ms: float


def secure_aggregate(messages: Sequence[RoundMessage], pp: scheme.PublicParams, total_samples: int,
                     codec: FixedPointCodec, client_seeds: dict, expected_round: int | None = None,
                     hint_weights=None, extra_key_shares: Sequence[bytes] = (),
                     bsgs: BSGS | None = None) -> AggregateResult:
    """Decrypt the (sample-weighted) sum of the clients' clustered models and rescale.

    ``client_seeds`` maps client id to its filter seed.  ``extra_key_shares``
    carries key shares of key holders that uploaded no model this round.
    ``hint_weights`` (the previous global model) only speeds up the
    discrete-log search.
    """
    msgs = list(messages)
    if not msgs:
        raise InvalidArgument("no messages")
    rounds = {m.round for m in msgs}
    if len(rounds) != 1 or (expected_round is not None and rounds != {int(expected_round)}):
        raise LabelMismatch(f"messages carry rounds {sorted(rounds)}")
    d = msgs[0].d
    if any(m.d != d for m in msgs):
        raise InvalidArgument("messages disagree on d")
    round_ = rounds.pop()

    cts = [scheme.ciphertext_from_bytes(pp, m.ciphertext) for m in msgs]
    for m, ct in zip(msgs, cts):
        if ct.label != scheme._label_bytes(m.round) or ct.client_id != m.client_id:
            raise LabelMismatch(f"ciphertext of client {m.client_id} is bound to a different round")
        if ct.slot_count != m.kappa:
            raise DecodeError("slot count differs from kappa")
    shares = [scheme.partial_key_from_bytes(pp, m.partial_key) for m in msgs]
    shares += [scheme.partial_key_from_bytes(pp, b) for b in extra_key_shares]
    fk = scheme.combine_keys(pp, shares)
    if fk.label_scope != scheme._label_bytes(round_):
        raise LabelMismatch("functional key belongs to a different round")

    t0 = time.perf_counter()
    mappings = {}
    failures = 0
    for m in msgs:
        p = decode_mapping(m, client_seeds.get(m.client_id))
        unknown = p == ff.UNKNOWN
        failures += int(unknown.sum())
        mappings[m.client_id] = np.where(unknown, 0, p)
    t1 = time.perf_counter()

    bound = codec.aggregate_bound(max(fk.y) * len(msgs))
    dec = scheme.Decryptor(pp, fk, cts, bound=bound, bsgs=bsgs)
    # one column per weighted client, in the decryptor's order
    combos = np.stack([mappings[ct.client_id] for ct in dec.cts], axis=1)
    uniq, inverse = np.unique(combos, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if uniq.shape[0] > len(dec.cts) * max(ct.slot_count for ct in dec.cts):
        dec.precompute()
    if hint_weights is not None:
        hints_full = codec.hint(hint_weights, total_samples)
        hint_u = np.zeros(uniq.shape[0])
        hint_u[inverse] = hints_full
    else:
        hint_u = np.zeros(uniq.shape[0])
    values = np.empty(uniq.shape[0], dtype=object)
    t_dlog = 0.0
    for k in range(uniq.shape[0]):
        raw = dec.raw_combination(uniq[k])
        ts = time.perf_counter()
        values[k] = dec.bsgs.solve(raw, int(hint_u[k]))
        t_dlog += time.perf_counter() - ts
    t2 = time.perf_counter()
    agg = values[inverse]
    weights = codec.decode(agg.astype(np.float64), total_samples)
    return AggregateResult(weights, mappings, failures, agg, 1e3 * (t1 - t0), 1e3 * (t2 - t1),
                           1e3 * t_dlog)


def plaintext_aggregate(models: Sequence[ClusteredModel], sample_counts: Sequence[int],
                        codec: FixedPointCodec | None = None) -> np.ndarray:
    """Reference: sample-weighted mean of the reconstructed clustered models.

    With ``codec`` the centroids are quantized exactly as the encrypted path does.
    """
    total = float(sum(sample_counts))
    acc = np.zeros(models[0].d, dtype=np.float64)
    if codec is None:
        for m, c in zip(models, sample_counts):
            acc += c * m.centroids[m.mapping]
        return acc / total
    ints = np.zeros(models[0].d, dtype=np.int64)
    for m, c in zip(models, sample_counts):
        q, _ = codec.encode(m.centroids, c)
        ints += np.asarray(q, dtype=np.int64)[m.mapping]
    return codec.decode(ints, total)


# ----------------------------------------------------------- communication


@dataclass(frozen=True)
class LedgerRow:
    round: int
    client: int
    header_bytes: int
    ct_bytes: int
    filter_bytes: int
    key_bytes: int
    d: int

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.ct_bytes + self.filter_bytes + self.key_bytes

    @property
    def bpp(self) -> float:
        return 8.0 * self.total_bytes / self.d

    @property
    def ratio(self) -> float:
        return self.bpp / 32.0

    @property
    def ratio_excl_key(self) -> float:
        return 8.0 * (self.total_bytes - self.key_bytes) / (32.0 * self.d)


@dataclass
class CommunicationLedger:
    rows: list = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(r.total_bytes for r in self.rows)

    def _fedavg_bits(self) -> int:
        return sum(32 * r.d for r in self.rows)

    @property
    def ratio(self) -> float:
        return 8.0 * self.total_bytes / self._fedavg_bits()

    @property
    def ratio_excl_key(self) -> float:
        return 8.0 * sum(r.total_bytes - r.key_bytes for r in self.rows) / self._fedavg_bits()

    def extend(self, other: "CommunicationLedger"):
        self.rows.extend(other.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "client", "ct_bytes", "filter_bytes", "key_bytes", "header_bytes",
                    "bpp", "ratio", "ratio_excl_key"])
        for r in self.rows:
            w.writerow([r.round, r.client, r.ct_bytes, r.filter_bytes, r.key_bytes, r.header_bytes,
                        f"{r.bpp:.6f}", f"{r.ratio:.6f}", f"{r.ratio_excl_key:.6f}"])
        return buf.getvalue()


def account_round(messages: Sequence[RoundMessage], d: int | None = None) -> CommunicationLedger:
    """Byte-exact uplink accounting; ``ratio`` compares against 32-bit FedAvg uploads."""
    rows = []
    for m in messages:
        dd = int(d if d is not None else m.d)
        rows.append(LedgerRow(m.round, m.client_id, m.header_bytes, len(m.ciphertext), len(m.mapping),
                              len(m.partial_key), dd))
        assert rows[-1].total_bytes == len(m.to_bytes())
    return CommunicationLedger(rows)
