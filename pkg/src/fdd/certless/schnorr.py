"""Schnorr signatures and a two-round aggregated multisignature.

Plain signatures are used for per-peer votes; the multisignature is what the
KGD peers attach to partial-secret issuance messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .group import Group, GroupError, Rng, system_rng
from .wire import WireError, decode_fields, encode_fields

SIG_TAG = b"SCH1"
MSIG_TAG = b"MSG1"


class Outcome(IntEnum):
    """Tri-state verification result; INDETERMINATE stands in for bottom."""

    REJECT = 0
    ACCEPT = 1
    INDETERMINATE = 2


def hedged_nonce(group: Group, secret: int, msg: bytes, rng: Rng | None) -> int:
    # deterministic part protects against a bad rng, random part against fault replay
    rnd = (rng or system_rng()).randbytes(32)
    k = group.hash_to_scalar("fdd/nonce", group.encode_scalar(secret), msg, rnd)
    return k or 1


@dataclass(frozen=True)
class Signature:
    T: object
    z: int

    def encode(self, group: Group) -> bytes:
        return encode_fields(SIG_TAG, [group.encode(self.T), group.encode_scalar(self.z)])

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "Signature":
        t, z = decode_fields(SIG_TAG, data, 2)
        return cls(group.decode(t), group.decode_scalar(z))


def challenge(group: Group, tag: str, T, *parts: bytes) -> int:
    return group.hash_to_scalar(tag, group.encode(T), *parts)


def schnorr_sign(group: Group, secret: int, msg: bytes, rng: Rng | None = None) -> Signature:
    pub = group.gexp(secret)
    t = hedged_nonce(group, secret, msg, rng)
    T = group.gexp(t)
    c = challenge(group, "fdd/sig", T, group.encode(pub), msg)
    return Signature(T, (t + c * secret) % group.q)


def schnorr_verify(group: Group, pub, msg: bytes, sig: Signature | bytes) -> bool:
    try:
        if isinstance(sig, (bytes, bytearray)):
            sig = Signature.decode(group, sig)
        if pub is group.identity or not group.is_element(pub):
            return False
        c = challenge(group, "fdd/sig", sig.T, group.encode(pub), msg)
        return group.gexp(sig.z) == group.mul(sig.T, group.exp(pub, c))
    except (GroupError, WireError, TypeError, ValueError):
        return False


# -- multisignature ---------------------------------------------------------

def key_coefficients(group: Group, publics: list) -> list[int]:
    """Per-key weights a_i = H(L, P_i); these stop rogue-key cancellation."""
    L = b"".join(group.encode(p) for p in publics)
    return [group.hash_to_scalar("fdd/musig-coef", L, group.encode(p)) for p in publics]


def aggregate_key(group: Group, publics: list, signers: list[int]):
    coef = key_coefficients(group, publics)
    acc = group.identity
    for i in signers:
        acc = group.mul(acc, group.exp(publics[i], coef[i]))
    return acc


def bitmap_of(signers: list[int], n: int) -> bytes:
    bits = bytearray((n + 7) // 8)
    for i in signers:
        bits[i // 8] |= 1 << (i % 8)
    return bytes(bits)


def signers_of(bitmap: bytes) -> list[int]:
    return [8 * j + b for j, byte in enumerate(bitmap) for b in range(8) if byte >> b & 1]


@dataclass(frozen=True)
class MultiSignature:
    digest: bytes
    T: object
    z: int
    bitmap: bytes

    @property
    def signers(self) -> list[int]:
        return signers_of(self.bitmap)

    def encode(self, group: Group) -> bytes:
        return encode_fields(MSIG_TAG, [self.digest, group.encode(self.T),
                                        group.encode_scalar(self.z), self.bitmap])

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "MultiSignature":
        d, t, z, bm = decode_fields(MSIG_TAG, data, 4)
        if len(d) != 32:
            raise WireError("digest must be 32 bytes")
        return cls(d, group.decode(t), group.decode_scalar(z), bm)


def msig_challenge(group: Group, agg, T, digest: bytes) -> int:
    return challenge(group, "fdd/musig", T, group.encode(agg), digest)


@dataclass
class SigningSession:
    """One cosigner's state for a single multisignature round."""

    index: int
    digest: bytes
    nonce: int | None
    commitment: object = None
    used: bool = field(default=False)


def verify_multisig(group: Group, digest: bytes, sig: MultiSignature, publics: list,
                    quorum: int | None = None) -> Outcome:
    quorum = len(publics) if quorum is None else quorum
    signers = sig.signers
    if any(i >= len(publics) for i in signers):
        return Outcome.INDETERMINATE
    if sig.digest != digest or len(signers) < quorum or not signers:
        return Outcome.REJECT
    if len(sig.bitmap) != (len(publics) + 7) // 8:
        return Outcome.REJECT
    agg = aggregate_key(group, publics, signers)
    c = msig_challenge(group, agg, sig.T, digest)
    ok = group.gexp(sig.z) == group.mul(sig.T, group.exp(agg, c))
    return Outcome.ACCEPT if ok else Outcome.REJECT
