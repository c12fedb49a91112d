"""Decentralized multi-client functional encryption for inner products.

Pairing-based construction with labels.  Notation (multiplicative groups
G1, G2, GT of prime order p, generators g1, g2):

* client i holds ``s_i`` in Z_p^2 and ``T_i`` in Z_p^{2x2}; the ``T_i`` of all
  n clients sum to the zero matrix (issued by a setup authority);
* ``Enc(x, l)``: ``U = H1(l)`` in G1^2, ``C = U1^{s_i1} U2^{s_i2} g1^x``;
* ``dKeyShare(y)``: ``V = H2(l, y)`` in G2^2, ``d_i = g2^{y_i s_i} V^{T_i}``;
* ``dKeyComb``: ``D = prod d_i = g2^{sum y_i s_i}`` because ``sum T_i = 0``;
* ``Dec``: ``e(prod C_i^{y_i}, g2) / (e(U1, D1) e(U2, D2)) = e(g1, g2)^{<x, y>}``,
  followed by a bounded discrete log.

A ciphertext holds one G1 element per plaintext slot, all under the same
label, so slots of different clients can be freely combined at decryption.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import (DecodeError, InsufficientCiphertexts, InsufficientShares, InvalidArgument,
                      LabelMismatch, PlaintextBoundExceeded, TagMismatch)
from .bsgs import BSGS
from .groups import PairingGroup, get_group, hash_label

B_SLOT = 1 << 20
B_AGG = 1 << 32
Y_BOUND = 1 << 16


def _label_bytes(label) -> bytes:
    if isinstance(label, bytes):
        out = label
    elif isinstance(label, (int, np.integer)):
        out = str(int(label)).encode()
    else:
        out = str(label).encode()
    if not out:
        raise InvalidArgument("label must be non-empty")
    return out


@dataclass(frozen=True)
class PublicParams:
    security_level: int
    n: int
    tag: bytes  # domain separation for hash-to-group, derived from the setup seed

    @property
    def group(self) -> PairingGroup:
        return get_group(self.security_level)

    def to_bytes(self) -> bytes:
        return b"EPP1" + struct.pack("<HI", self.security_level, self.n) + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicParams":
        if len(data) != 42 or data[:4] != b"EPP1":
            raise DecodeError("bad public-parameter encoding")
        ks, n = struct.unpack_from("<HI", data, 4)
        return cls(ks, n, bytes(data[10:]))


def setup(security_level: int = 256, n: int = 2, rng_seed: int = 0) -> PublicParams:
    n = int(n)
    if n < 2:
        raise InvalidArgument("at least two clients are required")
    get_group(security_level)  # validates KS
    tag = hash_label(b"enccluster-pp", str(int(rng_seed)).encode(), str(n).encode())
    return PublicParams(int(security_level), n, tag)


def _derive_scalar(pp: PublicParams, seed: bytes, *parts) -> int:
    g = pp.group
    data = hash_label(pp.tag, seed, *[str(p).encode() for p in parts])
    wide = hashlib.shake_256(data).digest(g.scalar_bytes + 16)
    return int.from_bytes(wide, "big") % g.order


class SetupTranscript:
    """The setup authority's view: issues each client its keys exactly once.

    All secrets derive from ``seed``; the last client's share matrix is the
    negated sum of the others, so the n matrices sum to zero.
    """

    def __init__(self, pp: PublicParams, seed: int | bytes):
        self.pp = pp
        self.seed = seed if isinstance(seed, bytes) else str(int(seed)).encode()
        self.issued: set[int] = set()
        p = pp.group.order
        mats = [[[_derive_scalar(pp, self.seed, "T", i, a, b) for b in range(2)] for a in range(2)]
                for i in range(pp.n - 1)]
        last = [[-sum(m[a][b] for m in mats) % p for b in range(2)] for a in range(2)]
        self._mats = [tuple(tuple(row) for row in m) for m in mats + [last]]

    def share_matrix(self, client_id: int):
        return self._mats[client_id]


@dataclass(frozen=True)
class ClientKeyPair:
    pp: PublicParams = field(repr=False)
    client_id: int
    s: tuple  # (s1, s2), the encryption key
    T: tuple = field(repr=False)  # 2x2 share matrix

    @property
    def encryption_key(self):
        return self.s


def keygen(pp: PublicParams, client_id: int, transcript: SetupTranscript) -> ClientKeyPair:
    client_id = int(client_id)
    if not 0 <= client_id < pp.n:
        raise InvalidArgument(f"client_id must lie in [0, {pp.n})")
    if transcript.pp != pp:
        raise InvalidArgument("transcript belongs to different public parameters")
    if client_id in transcript.issued:
        raise InvalidArgument(f"client_id {client_id} already issued in this transcript")
    transcript.issued.add(client_id)
    s = (_derive_scalar(pp, transcript.seed, "s", client_id, 0),
         _derive_scalar(pp, transcript.seed, "s", client_id, 1))
    return ClientKeyPair(pp, client_id, s, transcript.share_matrix(client_id))


def keygen_all(pp: PublicParams, seed: int = 0) -> list[ClientKeyPair]:
    tr = SetupTranscript(pp, seed)
    return [keygen(pp, i, tr) for i in range(pp.n)]


@lru_cache(maxsize=256)
def _u_elements(pp: PublicParams, label: bytes):
    g = pp.group
    return (g.hash_g1(hash_label(pp.tag, b"U0", label)), g.hash_g1(hash_label(pp.tag, b"U1", label)))


@lru_cache(maxsize=256)
def _v_elements(pp: PublicParams, function_tag: bytes):
    g = pp.group
    return (g.hash_g2(hash_label(pp.tag, b"V0", function_tag)),
            g.hash_g2(hash_label(pp.tag, b"V1", function_tag)))


def function_tag(label_scope, y: Sequence[int]) -> bytes:
    return hash_label(b"f", _label_bytes(label_scope), b",".join(str(int(v)).encode() for v in y))


# ------------------------------------------------------------------ encryption


@dataclass(frozen=True)
class Ciphertext:
    client_id: int
    label: bytes
    elements: tuple = field(repr=False)  # one G1 element per slot

    @property
    def slot_count(self) -> int:
        return len(self.elements)


def encrypt(keypair: ClientKeyPair, plaintexts, label, bound: int = B_SLOT) -> Ciphertext:
    lab = _label_bytes(label)
    xs = [int(v) for v in np.asarray(plaintexts, dtype=object).ravel()]
    if not xs:
        raise InvalidArgument("need at least one plaintext slot")
    worst = max(abs(v) for v in xs)
    if worst > bound:
        raise PlaintextBoundExceeded(f"|plaintext| = {worst} exceeds the slot bound {bound}")
    g = keypair.pp.group
    u1, u2 = _u_elements(keypair.pp, lab)
    mask = (u1 ** keypair.s[0]) * (u2 ** keypair.s[1])
    g1 = g.g1
    return Ciphertext(keypair.client_id, lab, tuple(mask * (g1 ** x) for x in xs))


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    parts = [el.to_binary() for el in ct.elements]
    width = len(parts[0])
    head = b"ECT1" + struct.pack("<IH", ct.client_id, len(ct.label)) + ct.label
    return head + struct.pack("<IH", len(parts), width) + b"".join(parts)


def ciphertext_from_bytes(pp: PublicParams, data: bytes) -> Ciphertext:
    data = bytes(data)
    try:
        if data[:4] != b"ECT1":
            raise DecodeError("bad ciphertext magic")
        cid, llen = struct.unpack_from("<IH", data, 4)
        off = 10
        label = data[off:off + llen]
        off += llen
        count, width = struct.unpack_from("<IH", data, off)
        off += 6
    except struct.error:
        raise DecodeError("truncated ciphertext header") from None
    if len(label) != llen or llen == 0:
        raise DecodeError("bad ciphertext label")
    if width != pp.group.g1_bytes or len(data) != off + count * width or count == 0:
        raise DecodeError("ciphertext payload length mismatch")
    g = pp.group
    els = tuple(g.g1_from_bytes(data[off + k * width:off + (k + 1) * width]) for k in range(count))
    return Ciphertext(cid, label, els)


# ----------------------------------------------------------------- key shares


@dataclass(frozen=True)
class PartialDecKey:
    client_id: int
    label_scope: bytes
    y: tuple
    tag: bytes
    shares: tuple = field(repr=False)  # two G2 elements


def derive_partial_key(keypair: ClientKeyPair, y: Sequence[int], label_scope,
                       y_bound: int = Y_BOUND, min_support: int = 1) -> PartialDecKey:
    """One client's share of the functional key for ``f(x) = <x, y>``.

    ``min_support`` lets a client refuse functions that weight fewer than
    that many clients (a function touching a single client isolates it).
    """
    pp = keypair.pp
    y = tuple(int(v) for v in y)
    if len(y) != pp.n:
        raise InvalidArgument(f"y has length {len(y)}, expected n={pp.n}")
    if any(v < 0 for v in y):
        raise InvalidArgument("y entries must be non-negative")
    if max(y) > y_bound:
        raise PlaintextBoundExceeded(f"y entry {max(y)} exceeds the bound {y_bound}")
    if sum(1 for v in y if v) < min_support:
        raise InvalidArgument(f"function must weight at least {min_support} clients")
    scope = _label_bytes(label_scope)
    tag = function_tag(scope, y)
    g = pp.group
    v1, v2 = _v_elements(pp, tag)
    T = keypair.T
    yi = y[keypair.client_id]
    d1 = (g.g2 ** (yi * keypair.s[0] % g.order)) * (v1 ** T[0][0]) * (v2 ** T[0][1])
    d2 = (g.g2 ** (yi * keypair.s[1] % g.order)) * (v1 ** T[1][0]) * (v2 ** T[1][1])
    return PartialDecKey(keypair.client_id, scope, y, tag, (d1, d2))


def partial_key_to_bytes(pk: PartialDecKey) -> bytes:
    shares = b"".join(el.to_binary() for el in pk.shares)
    head = b"EPK1" + struct.pack("<IH", pk.client_id, len(pk.label_scope)) + pk.label_scope
    body = struct.pack("<I", len(pk.y)) + b"".join(struct.pack("<I", v) for v in pk.y)
    return head + body + struct.pack("<H", len(shares) // 2) + shares


def partial_key_from_bytes(pp: PublicParams, data: bytes) -> PartialDecKey:
    data = bytes(data)
    g = pp.group
    try:
        if data[:4] != b"EPK1":
            raise DecodeError("bad partial-key magic")
        cid, llen = struct.unpack_from("<IH", data, 4)
        off = 10
        scope = data[off:off + llen]
        off += llen
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        y = struct.unpack_from(f"<{n}I", data, off)
        off += 4 * n
        (width,) = struct.unpack_from("<H", data, off)
        off += 2
    except struct.error:
        raise DecodeError("truncated partial key") from None
    if len(scope) != llen or width != g.g2_bytes or len(data) != off + 2 * width:
        raise DecodeError("partial-key length mismatch")
    shares = (g.g2_from_bytes(data[off:off + width]), g.g2_from_bytes(data[off + width:]))
    return PartialDecKey(cid, scope, tuple(y), function_tag(scope, y), shares)


@dataclass(frozen=True)
class FunctionalDecKey:
    label_scope: bytes
    y: tuple
    tag: bytes
    key: tuple = field(repr=False)  # (D1, D2) in G2
    contributing_count: int = 0


def combine_keys(pp: PublicParams, shares: Sequence[PartialDecKey]) -> FunctionalDecKey:
    shares = list(shares)
    ids = [s.client_id for s in shares]
    if len(set(ids)) != len(ids):
        raise InvalidArgument("duplicate client in key shares")
    if any(not 0 <= i < pp.n for i in ids):
        raise InvalidArgument("key share from unknown client")
    if len(shares) < pp.n:
        raise InsufficientShares(f"{len(shares)} of {pp.n} key shares")
    tags = {s.tag for s in shares}
    if len(tags) != 1:
        raise TagMismatch("key shares derived for different functions")
    d1, d2 = shares[0].shares
    for s in shares[1:]:
        d1 = d1 * s.shares[0]
        d2 = d2 * s.shares[1]
    first = shares[0]
    return FunctionalDecKey(first.label_scope, first.y, first.tag, (d1, d2), len(shares))


# ------------------------------------------------------------------ decryption


class Decryptor:
    """Decrypts inner products of one round.

    ``ciphertexts`` may come from any superset of the clients weighted by the
    key; slots of different clients can be mixed through
    :meth:`decrypt_combination`.  Labels are checked before any group work.
    """

    def __init__(self, pp: PublicParams, fk: FunctionalDecKey, ciphertexts: Sequence[Ciphertext],
                 bound: int = B_AGG, bsgs: BSGS | None = None):
        cts = list(ciphertexts)
        labels = {ct.label for ct in cts}
        if len(labels) > 1 or (labels and labels != {fk.label_scope}):
            raise LabelMismatch("ciphertext labels differ from each other or from the key's label")
        by_id = {}
        for ct in cts:
            if ct.client_id in by_id:
                raise InvalidArgument(f"two ciphertexts from client {ct.client_id}")
            by_id[ct.client_id] = ct
        self.support = [i for i, v in enumerate(fk.y) if v]
        missing = [i for i in self.support if i not in by_id]
        if missing:
            raise InsufficientCiphertexts(f"no ciphertext from clients {missing}")
        self.pp = pp
        self.fk = fk
        self.cts = [by_id[i] for i in self.support]
        self.weights = [fk.y[i] for i in self.support]
        g = pp.group
        self.group = g
        u1, u2 = _u_elements(pp, fk.label_scope)
        self._k_inv = (u1.pair(fk.key[0]) * u2.pair(fk.key[1])).inverse()
        self.bsgs = bsgs if bsgs is not None and bsgs.bound >= bound else BSGS(g, bound)
        self._table = None

    def precompute(self):
        """Pair every weighted ciphertext slot once: cheaper when many combinations are decrypted."""
        g2 = self.group.g2
        self._table = [[(el if w == 1 else el ** w).pair(g2) for el in ct.elements] for ct, w in zip(self.cts, self.weights)]
        return self

    def _check_slots(self, slots):
        if len(slots) != len(self.cts):
            raise InvalidArgument("need one slot index per weighted client")
        for ct, s in zip(self.cts, slots):
            if not 0 <= s < ct.slot_count:
                raise InvalidArgument(f"slot {s} out of range for client {ct.client_id}")

    def raw_combination(self, slots: Sequence[int]):
        """e(g1, g2)^<x, y> for the chosen slot of each weighted client."""
        slots = [int(s) for s in slots]
        self._check_slots(slots)
        if self._table is not None:
            acc = self._k_inv
            for row, s in zip(self._table, slots):
                acc = acc * row[s]
            return acc
        c = None
        for ct, w, s in zip(self.cts, self.weights, slots):
            term = ct.elements[s] if w == 1 else ct.elements[s] ** w
            c = term if c is None else c * term
        return c.pair(self.group.g2) * self._k_inv

    def decrypt_combination(self, slots: Sequence[int], hint: int = 0) -> int:
        return self.bsgs.solve(self.raw_combination(slots), hint)

    def decrypt_slot(self, slot: int, hint: int = 0) -> int:
        return self.decrypt_combination([slot] * len(self.cts), hint)


def decrypt(pp: PublicParams, fk: FunctionalDecKey, ciphertexts: Sequence[Ciphertext], slot: int = 0,
            bound: int = B_AGG, hint: int = 0) -> int:
    """``sum_i y_i x_{i,slot}`` recovered from one ciphertext per weighted client."""
    return Decryptor(pp, fk, ciphertexts, bound).decrypt_slot(slot, hint)
