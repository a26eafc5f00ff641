"""Prime-order groups used by the certificateless scheme.

Two concrete groups share one multiplicative-style interface:

* :class:`ModPGroup` - the order-q subgroup of Z_p^* for a safe prime p = 2q + 1.
  The 64-bit instance exists so every operation can be checked against
  hand-written modular arithmetic in tests.
* :class:`CurveGroup` - secp256k1 written multiplicatively (``mul`` is point
  addition, ``exp`` is scalar multiplication).
"""

from __future__ import annotations

import hashlib
import random
import secrets
from dataclasses import dataclass
from typing import Any, Protocol

Element = Any


class GroupError(ValueError):
    pass


class Rng(Protocol):
    def randrange(self, stop: int) -> int: ...
    def randbytes(self, n: int) -> bytes: ...


def system_rng() -> Rng:
    return secrets.SystemRandom()


class Group:
    name: str
    q: int
    security_level: int

    @property
    def scalar_size(self) -> int:
        return (self.q.bit_length() + 7) // 8

    # subclasses provide: identity, generator, mul, exp, gexp, encode, decode, describe

    def random_scalar(self, rng: Rng | None = None) -> int:
        rng = rng or system_rng()
        return 1 + rng.randrange(self.q - 1)

    def hash_to_scalar(self, tag: str, *parts: bytes) -> int:
        """Domain-separated SHA-256 expanded past |q| by 128 bits, reduced mod q."""
        need = (self.q.bit_length() + 128 + 7) // 8
        out = b""
        counter = 0
        while len(out) < need:
            h = hashlib.sha256()
            h.update(tag.encode())
            h.update(counter.to_bytes(4, "little"))
            for p in parts:
                h.update(len(p).to_bytes(4, "little"))
                h.update(p)
            out += h.digest()
            counter += 1
        return int.from_bytes(out[:need], "big") % self.q

    def encode_scalar(self, k: int) -> bytes:
        return (k % self.q).to_bytes(self.scalar_size, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_size:
            raise GroupError("scalar has wrong length")
        k = int.from_bytes(data, "big")
        if k >= self.q:
            raise GroupError("scalar out of range")
        return k

    def fingerprint(self) -> bytes:
        return hashlib.sha256(repr(sorted(self.describe().items())).encode()).digest()


@dataclass(frozen=True, eq=False)
class ModPGroup(Group):
    p: int
    q: int
    g: int
    name: str = "modp"

    def __post_init__(self):
        from sympy import isprime

        if not isprime(self.q):
            raise GroupError("subgroup order must be prime")
        if (self.p - 1) % self.q or not isprime(self.p):
            raise GroupError("q must divide p - 1 for prime p")
        if not 1 < self.g < self.p or pow(self.g, self.q, self.p) != 1:
            raise GroupError("g does not generate the order-q subgroup")

    def __eq__(self, other):
        return isinstance(other, ModPGroup) and (self.p, self.q, self.g) == (other.p, other.q, other.g)

    def __hash__(self):
        return hash((self.p, self.q, self.g))

    @property
    def security_level(self) -> int:
        return self.p.bit_length()

    @property
    def identity(self) -> int:
        return 1

    @property
    def generator(self) -> int:
        return self.g

    @property
    def element_size(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def exp(self, a: int, k: int) -> int:
        return pow(a, k % self.q, self.p)

    def gexp(self, k: int) -> int:
        return pow(self.g, k % self.q, self.p)

    def is_element(self, a) -> bool:
        return isinstance(a, int) and 0 < a < self.p and pow(a, self.q, self.p) == 1

    def encode(self, a: int) -> bytes:
        return a.to_bytes(self.element_size, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.element_size:
            raise GroupError("element has wrong length")
        a = int.from_bytes(data, "big")
        if not self.is_element(a):
            raise GroupError("not a subgroup element")
        return a

    def describe(self) -> dict:
        return {"kind": "modp", "p": self.p, "q": self.q, "g": self.g}

    @classmethod
    def generate(cls, bits: int, seed: int) -> "ModPGroup":
        """Deterministic safe-prime group of ``bits``-bit modulus."""
        from sympy import isprime

        rng = random.Random(seed)
        while True:
            q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
            if isprime(q) and isprime(2 * q + 1):
                break
        p = 2 * q + 1
        while True:
            h = rng.randrange(2, p - 1)
            g = pow(h, 2, p)
            if g != 1:
                return cls(p, q, g)


# secp256k1 domain parameters
_P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
_N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
_GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8


def _jac_double(pt):
    x, y, z = pt
    if y == 0:
        return (0, 1, 0)
    ysq = y * y % _P
    s = 4 * x * ysq % _P
    m = 3 * x * x % _P
    nx = (m * m - 2 * s) % _P
    ny = (m * (s - nx) - 8 * ysq * ysq) % _P
    nz = 2 * y * z % _P
    return (nx, ny, nz)


def _jac_add(p1, p2):
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    if z1 == 0:
        return p2
    if z2 == 0:
        return p1
    z1z1 = z1 * z1 % _P
    z2z2 = z2 * z2 % _P
    u1 = x1 * z2z2 % _P
    u2 = x2 * z1z1 % _P
    s1 = y1 * z2 * z2z2 % _P
    s2 = y2 * z1 * z1z1 % _P
    if u1 == u2:
        if s1 != s2:
            return (0, 1, 0)
        return _jac_double(p1)
    h = (u2 - u1) % _P
    r = (s2 - s1) % _P
    hh = h * h % _P
    hhh = h * hh % _P
    v = u1 * hh % _P
    nx = (r * r - hhh - 2 * v) % _P
    ny = (r * (v - nx) - s1 * hhh) % _P
    nz = h * z1 * z2 % _P
    return (nx, ny, nz)


def _to_affine(pt):
    x, y, z = pt
    if z == 0:
        return None
    zi = pow(z, -1, _P)
    zi2 = zi * zi % _P
    return (x * zi2 % _P, y * zi2 * zi % _P)


def _jac_mul(pt, k):
    acc = (0, 1, 0)
    for bit in bin(k)[2:]:
        acc = _jac_double(acc)
        if bit == "1":
            acc = _jac_add(acc, pt)
    return acc


class CurveGroup(Group):
    """secp256k1; elements are affine (x, y) tuples, ``None`` is the identity."""

    name = "secp256k1"
    q = _N
    p = _P
    security_level = 256
    element_size = 33

    def __init__(self):
        table = []
        cur = (_GX, _GY, 1)
        for _ in range(256):
            table.append(cur)
            cur = _jac_double(cur)
        self._g_table = table

    def __eq__(self, other):
        return isinstance(other, CurveGroup)

    def __hash__(self):
        return hash(self.name)

    identity = None

    @property
    def generator(self):
        return (_GX, _GY)

    def mul(self, a, b):
        if a is None:
            return b
        if b is None:
            return a
        return _to_affine(_jac_add((a[0], a[1], 1), (b[0], b[1], 1)))

    def exp(self, a, k):
        k %= self.q
        if a is None or k == 0:
            return None
        return _to_affine(_jac_mul((a[0], a[1], 1), k))

    def gexp(self, k):
        k %= self.q
        acc = (0, 1, 0)
        i = 0
        while k:
            if k & 1:
                acc = _jac_add(acc, self._g_table[i])
            k >>= 1
            i += 1
        return _to_affine(acc)

    def is_element(self, a) -> bool:
        if a is None:
            return True
        x, y = a
        return 0 <= x < _P and 0 <= y < _P and (y * y - x * x * x - 7) % _P == 0

    def encode(self, a) -> bytes:
        if a is None:
            return bytes(33)
        return bytes([2 + (a[1] & 1)]) + a[0].to_bytes(32, "big")

    def decode(self, data: bytes):
        if len(data) != 33:
            raise GroupError("element has wrong length")
        if data == bytes(33):
            return None
        if data[0] not in (2, 3):
            raise GroupError("bad point prefix")
        x = int.from_bytes(data[1:], "big")
        if x >= _P:
            raise GroupError("x out of range")
        y2 = (pow(x, 3, _P) + 7) % _P
        y = pow(y2, (_P + 1) // 4, _P)
        if y * y % _P != y2:
            raise GroupError("point not on curve")
        if (y & 1) != (data[0] & 1):
            y = _P - y
        return (x, y)

    def describe(self) -> dict:
        return {"kind": "secp256k1", "q": self.q}


TOY_BITS = 64


@dataclass(frozen=True)
class SystemParams:
    group: Group
    hash_name: str = "sha256"

    @property
    def security_level(self) -> int:
        return self.group.security_level

    def describe(self) -> dict:
        return {**self.group.describe(), "hash": self.hash_name}


def setup(level: str | int = "standard", seed: int = 42) -> SystemParams:
    """Publish group parameters.  ``toy`` is a 64-bit modulus for oracle tests."""
    if level in ("toy", TOY_BITS):
        return SystemParams(ModPGroup.generate(TOY_BITS, seed))
    if level in ("standard", 256):
        return SystemParams(_standard_curve())
    raise GroupError(f"unsupported security level {level!r}")


_CURVE: CurveGroup | None = None


def _standard_curve() -> CurveGroup:
    global _CURVE
    if _CURVE is None:
        _CURVE = CurveGroup()
    return _CURVE
