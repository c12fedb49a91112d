"""Asymmetric pairing groups behind one small interface.

``get_group(ks)`` returns a :class:`PairingGroup` whose prime order has about
``ks`` bits.  256 uses the native BLS12-381 implementation from ``petrelic``;
the other sizes use the pure-Python BN family in :mod:`.bn`.

Elements use multiplicative notation everywhere: ``a * b``, ``a ** k``,
``a.inverse()``, ``g1.pair(g2)``.
"""
from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable

import gmpy2

from ..errors import DecodeError, InvalidArgument
from . import bn

# BN parameters u (odd, p and r prime), indexed by the bit length of r
BN_PARAMS = {
    64: 22863,
    128: 1474439509,
    192: 96628818143689,
    256: 6332666225848382053,
    384: 27198594336502537395056263871,
    521: 555678778281880393337104294138035057053,
}

SUPPORTED_KS = (128, 192, 256, 384, 521)


@dataclass
class PairingGroup:
    name: str
    order: int
    g1: Any
    g2: Any
    _hash_g1: Callable[[bytes], Any] = field(repr=False)
    _hash_g2: Callable[[bytes], Any] = field(repr=False)
    _load_g1: Callable[[bytes], Any] = field(repr=False)
    _load_g2: Callable[[bytes], Any] = field(repr=False)
    g1_bytes: int = 0
    g2_bytes: int = 0
    gt_bytes: int = 0

    @property
    def bits(self) -> int:
        return self.order.bit_length()

    @property
    def scalar_bytes(self) -> int:
        return (self.bits + 7) // 8

    def random_scalar(self, rng=None) -> int:
        """Uniform in Z_order; ``rng`` (a ``random.Random``-like object) makes it reproducible."""
        if rng is None:
            return secrets.randbelow(self.order)
        return rng.randrange(self.order)

    def hash_g1(self, msg: bytes):
        return self._hash_g1(msg)

    def hash_g2(self, msg: bytes):
        return self._hash_g2(msg)

    def gt_one(self):
        return self.gt_generator ** 0

    @property
    def gt_generator(self):
        gt = self.__dict__.get("_gt")
        if gt is None:
            gt = self.__dict__["_gt"] = self.g1.pair(self.g2)
        return gt

    def g1_from_bytes(self, data: bytes):
        try:
            return self._load_g1(bytes(data))
        except (ValueError, TypeError) as exc:
            raise DecodeError(f"invalid G1 element: {exc}") from None

    def g2_from_bytes(self, data: bytes):
        try:
            return self._load_g2(bytes(data))
        except (ValueError, TypeError) as exc:
            raise DecodeError(f"invalid G2 element: {exc}") from None

    def gt_key(self, el) -> bytes:
        """Fast, injective byte key for a GT element (lookup tables only)."""
        try:
            return el.to_binary(compressed=False)
        except TypeError:
            return el.to_binary()


# ------------------------------------------------------------------ backends


def _bn_group(bits: int) -> PairingGroup:
    curve = bn.BNCurve(BN_PARAMS[bits])
    n = curve.nbytes
    return PairingGroup(
        name=curve.name,
        order=curve.r,
        g1=bn.BNG1(curve, curve.g1_gen),
        g2=bn.BNG2(curve, curve.g2_gen),
        _hash_g1=lambda m: bn.BNG1(curve, curve.hash_g1_point(m)),
        _hash_g2=lambda m: bn.BNG2(curve, curve.hash_g2_point(m)),
        _load_g1=lambda b: bn.BNG1.from_binary(curve, b),
        _load_g2=lambda b: bn.BNG2.from_binary(curve, b),
        g1_bytes=n + 1,
        g2_bytes=2 * n + 1,
        gt_bytes=12 * n,
    )


_BLS_P = int(
    "1a0111ea397fe69a4b1ba7b6434bacd764774b84f38512bf6730d2a0f6b0f6241eabfffeb153ffffb9feffffffffaaab", 16
)


def _bls_check_g1(data: bytes):
    # relic reports malformed points on stderr instead of raising, so vet the bytes first
    if data == b"\x00":
        return
    if len(data) != 49 or data[0] not in (2, 3):
        raise ValueError("bad G1 encoding")
    x = int.from_bytes(data[1:], "big")
    if x >= _BLS_P or gmpy2.jacobi(x**3 + 4, _BLS_P) == -1:
        raise ValueError("point not on curve")


def _bls_check_g2(data: bytes):
    if data == b"\x00":
        return
    if len(data) != 97 or data[0] not in (2, 3):
        raise ValueError("bad G2 encoding")
    p = _BLS_P
    x = (int.from_bytes(data[1:49], "big"), int.from_bytes(data[49:], "big"))
    if x[0] >= p or x[1] >= p:
        raise ValueError("coordinate out of range")
    rhs = bn._f2_add(bn._f2_mul(bn._f2_sqr(x, p), x, p), (4, 4), p)
    # a + bi is a square in Fp2 iff its norm a^2 + b^2 is a square in Fp
    if gmpy2.jacobi(rhs[0] ** 2 + rhs[1] ** 2, p) == -1:
        raise ValueError("point not on twist")


def _native_group() -> PairingGroup:
    from petrelic.multiplicative.pairing import G1, G2, G1Element, G2Element

    order = int(G1.order())

    def load(cls, check):
        def _load(data: bytes):
            check(data)
            el = cls.from_binary(data)
            if el.to_binary() != data or not (el ** order).is_neutral_element():
                raise ValueError("non-canonical encoding or point outside the subgroup")
            return el
        return _load

    return PairingGroup(
        name="bls12-381",
        order=order,
        g1=G1.generator(),
        g2=G2.generator(),
        _hash_g1=lambda m: G1.hash_to_point(b"EC-H1" + m),
        _hash_g2=lambda m: G2.hash_to_point(b"EC-H2" + m),
        _load_g1=load(G1Element, _bls_check_g1),
        _load_g2=load(G2Element, _bls_check_g2),
        g1_bytes=49,
        g2_bytes=97,
        gt_bytes=384,
    )


@lru_cache(maxsize=None)
def get_group(ks: int = 256) -> PairingGroup:
    """Pairing group for security parameter ``ks`` (bits of the group order).

    ``ks=64`` is accepted as an insecure, fast group for tests.
    """
    ks = int(ks)
    if ks == 256:
        try:
            return _native_group()
        except ImportError:  # pragma: no cover - native wheel missing
            return _bn_group(256)
    if ks in BN_PARAMS:
        return _bn_group(ks)
    raise InvalidArgument(f"unsupported key size {ks}; choose one of {SUPPORTED_KS}")


def hash_label(*parts: bytes) -> bytes:
    """Unambiguous concatenation of byte strings, hashed to 32 bytes."""
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()
