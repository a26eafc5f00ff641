"""Certificateless registration: KGD issuance, device keys, tx signatures, pointer encryption.

The KGD master secret is s = sum(S_i) over the cosigners, so P_pub = g^s is the
product of their public shares.  For a device with commitment U = g^X:

    R  = prod(g^{r_i})            h = H1(ID, R, U)
    PS = sum(r_i + S_i * h)       so g^PS = R * P_pub^h

The device key is Sk = (PS, X), Pk = (U, R), and signatures verify against
Q = U * R * P_pub^h = g^(X + PS), which anyone can rebuild from Pk, ID and
the KGD publics.  Neither half of Sk alone is enough to sign.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .group import Group, GroupError, Rng, SystemParams, system_rng
from .schnorr import (
    MultiSignature,
    Outcome,
    Signature,
    aggregate_key,
    bitmap_of,
    challenge,
    hedged_nonce,
    key_coefficients,
    msig_challenge,
    verify_multisig,
)
from .wire import WireError, decode_fields, encode_fields

PK_TAG = b"CLPK"
ISSUE_TAG = b"ISS1"
PTR_TAG = b"PTR1"


class IssuanceFailed(RuntimeError):
    pass


class DerivationRefused(ValueError):
    pass


class PointerDecryptionError(ValueError):
    pass


def _id_bytes(device_id: str | bytes) -> bytes:
    return device_id.encode() if isinstance(device_id, str) else bytes(device_id)


@dataclass(frozen=True)
class PublicParams:
    """What every participant needs to verify issuance and device signatures."""

    system: SystemParams
    cosigner_publics: tuple
    quorum: int

    def __post_init__(self):
        if not 1 <= self.quorum <= len(self.cosigner_publics):
            raise ValueError("quorum must lie in [1, n]")

    @property
    def group(self) -> Group:
        return self.system.group

    @property
    def n(self) -> int:
        return len(self.cosigner_publics)

    @property
    def master_public(self):
        acc = self.group.identity
        for p in self.cosigner_publics:
            acc = self.group.mul(acc, p)
        return acc


@dataclass(frozen=True)
class CosignerKey:
    index: int
    secret: int = field(repr=False)
    public: object = None

    def export(self, group: Group) -> dict:
        # public half only
        return {"index": self.index, "public": group.encode(self.public).hex()}


@dataclass(frozen=True)
class DeviceSecret:
    id: str
    x: int = field(repr=False)
    commitment: object = None


@dataclass(frozen=True)
class IssuanceMessage:
    id: str
    U: object
    R: object
    ps_commitment: object

    def encode(self, group: Group) -> bytes:
        return encode_fields(ISSUE_TAG, [_id_bytes(self.id), group.encode(self.U),
                                         group.encode(self.R), group.encode(self.ps_commitment)])

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "IssuanceMessage":
        i, u, r, c = decode_fields(ISSUE_TAG, data, 4)
        return cls(i.decode(), group.decode(u), group.decode(r), group.decode(c))

    def digest(self, group: Group) -> bytes:
        return hashlib.sha256(self.encode(group)).digest()


@dataclass(frozen=True)
class PartialSecret:
    id: str
    ps: int = field(repr=False)
    message: IssuanceMessage = None
    sigma: MultiSignature = None


@dataclass(frozen=True)
class DevicePublicKey:
    id: str
    U: object
    R: object

    def encode(self, group: Group) -> bytes:
        return encode_fields(PK_TAG, [_id_bytes(self.id), group.encode(self.U), group.encode(self.R)])

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "DevicePublicKey":
        i, u, r = decode_fields(PK_TAG, data, 3)
        return cls(i.decode(), group.decode(u), group.decode(r))


@dataclass(frozen=True)
class DeviceKeyPair:
    pk: DevicePublicKey
    ps: int = field(repr=False)
    x: int = field(repr=False)

    @property
    def id(self) -> str:
        return self.pk.id

    def scalar(self, q: int) -> int:
        return (self.ps + self.x) % q


def id_hash(group: Group, device_id: str, R, U) -> int:
    return group.hash_to_scalar("fdd/H1", _id_bytes(device_id), group.encode(R), group.encode(U))


def public_point(params: PublicParams, pk: DevicePublicKey, device_id: str | None = None):
    """Q = U * R * P_pub^H1(ID, R, U); binds the key to ``device_id``."""
    g = params.group
    did = pk.id if device_id is None else device_id
    h = id_hash(g, did, pk.R, pk.U)
    return g.mul(g.mul(pk.U, pk.R), g.exp(params.master_public, h))


# -- cosigner state machine -------------------------------------------------

@dataclass
class _Pending:
    device_id: str
    U: object
    r: int
    R: object = None
    h: int | None = None
    digest: bytes | None = None
    t: int | None = None
    T: object = None


class Cosigner:
    """One KGD peer.  Holds S_i and per-session nonces; nonces are single use."""

    def __init__(self, key: CosignerKey, params: SystemParams, rng: Rng | None = None):
        self.key = key
        self.group = params.group
        self._rng = rng or system_rng()
        self._sessions: dict[str, _Pending] = {}

    @property
    def index(self) -> int:
        return self.key.index

    def begin(self, session: str, device_id: str, U) -> object:
        """Round 1: commit to r_i."""
        if session in self._sessions:
            raise IssuanceFailed(f"session {session!r} already open")
        if not self.group.is_element(U) or U is self.group.identity:
            raise IssuanceFailed("device commitment is not a valid group element")
        r = self.group.random_scalar(self._rng)
        self._sessions[session] = _Pending(device_id, U, r)
        return self.group.gexp(r)

    def nonce(self, session: str, R, message: IssuanceMessage) -> object:
        """Round 2: learn the aggregate R and commit to a multisignature nonce."""
        st = self._sessions[session]
        if message.id != st.device_id or message.U != st.U or message.R != R:
            raise IssuanceFailed("issuance message does not match the opened session")
        g = self.group
        st.R = R
        st.h = id_hash(g, st.device_id, R, st.U)
        st.digest = message.digest(g)
        st.t = hedged_nonce(g, self.key.secret, st.digest, self._rng)
        st.T = g.gexp(st.t)
        return st.T

    def respond(self, session: str, T, publics: list, signers: list[int]) -> tuple[int, int]:
        """Round 3: (partial-secret share, multisignature share).  Closes the session."""
        st = self._sessions.pop(session)
        g = self.group
        coef = key_coefficients(g, publics)[self.index]
        agg = aggregate_key(g, publics, signers)
        c = msig_challenge(g, agg, T, st.digest)
        z = (st.t + c * coef * self.key.secret) % g.q
        ps = (st.r + self.key.secret * st.h) % g.q
        return ps, z

    def abort(self, session: str) -> None:
        self._sessions.pop(session, None)

    def sign(self, msg: bytes, rng: Rng | None = None) -> Signature:
        from .schnorr import schnorr_sign

        return schnorr_sign(self.group, self.key.secret, msg, rng or self._rng)


class KGD:
    """The consortium of key-generation-and-distribution peers."""

    def __init__(self, params: SystemParams, cosigners: list[Cosigner], quorum: int | None = None):
        self.system = params
        self.cosigners = cosigners
        publics = tuple(c.key.public for c in cosigners)
        self.public = PublicParams(params, publics, len(publics) if quorum is None else quorum)
        self._counter = 0

    @classmethod
    def create(cls, params: SystemParams, n: int = 4, rng: Rng | None = None,
               quorum: int | None = None) -> "KGD":
        rng = rng or system_rng()
        g = params.group
        cos = []
        for i in range(n):
            s = g.random_scalar(rng)
            cos.append(Cosigner(CosignerKey(i, s, g.gexp(s)), params, rng))
        return cls(params, cos, quorum)

    def issue(self, device_id: str, commitment, online: set[int] | None = None) -> PartialSecret:
        """Run the three message rounds with the reachable cosigners.

        The master secret is an additive n-of-n sharing, so PS cannot be formed
        unless every cosigner answers; any absence is an issuance failure.
        """
        g = self.system.group
        online = set(range(len(self.cosigners))) if online is None else set(online)
        if len(online) < len(self.cosigners):
            raise IssuanceFailed(f"only {len(online)} of {len(self.cosigners)} cosigners reachable")
        self._counter += 1
        session = f"{device_id}#{self._counter}"
        active = [c for c in self.cosigners if c.index in online]
        try:
            R = g.identity
            for c in active:
                R = g.mul(R, c.begin(session, device_id, commitment))
            h = id_hash(g, device_id, R, commitment)
            ps_commit = g.mul(R, g.exp(self.public.master_public, h))
            msg = IssuanceMessage(device_id, commitment, R, ps_commit)
            T = g.identity
            for c in active:
                T = g.mul(T, c.nonce(session, R, msg))
            signers = sorted(online)
            publics = list(self.public.cosigner_publics)
            ps = z = 0
            for c in active:
                ps_i, z_i = c.respond(session, T, publics, signers)
                ps, z = (ps + ps_i) % g.q, (z + z_i) % g.q
        except Exception:
            for c in active:
                c.abort(session)
            raise
        sigma = MultiSignature(msg.digest(g), T, z, bitmap_of(signers, len(self.cosigners)))
        return PartialSecret(device_id, ps, msg, sigma)


def gen_device_secret(params: SystemParams, device_id: str, rng: Rng | None = None,
                      x: int | None = None) -> DeviceSecret:
    g = params.group
    x = g.random_scalar(rng) if x is None else x
    if not 1 <= x < g.q:
        raise ValueError("device secret out of range")
    return DeviceSecret(device_id, x, g.gexp(x))


def gen_partial_secret(kgd: KGD, device_id: str, commitment, online: set[int] | None = None) -> PartialSecret:
    return kgd.issue(device_id, commitment, online)


def verify_issuance(msg: IssuanceMessage | bytes, sigma: MultiSignature | bytes,
                    public: PublicParams) -> Outcome:
    g = public.group
    try:
        if isinstance(msg, (bytes, bytearray)):
            msg = IssuanceMessage.decode(g, msg)
        if isinstance(sigma, (bytes, bytearray)):
            sigma = MultiSignature.decode(g, sigma)
        digest = msg.digest(g)
    except (WireError, GroupError, UnicodeDecodeError):
        return Outcome.REJECT
    return verify_multisig(g, digest, sigma, list(public.cosigner_publics), public.quorum)


def derive_keys(public: PublicParams, partial: PartialSecret, secret: DeviceSecret) -> DeviceKeyPair:
    g = public.group
    msg = partial.message
    if partial.id != secret.id or msg.id != secret.id:
        raise DerivationRefused("partial secret was issued for a different identity")
    if msg.U != secret.commitment:
        raise DerivationRefused("issuance does not carry this device's commitment")
    if verify_issuance(msg, partial.sigma, public) is not Outcome.ACCEPT:
        raise DerivationRefused("issuance multisignature did not verify")
    h = id_hash(g, secret.id, msg.R, msg.U)
    if g.gexp(partial.ps) != g.mul(msg.R, g.exp(public.master_public, h)) or g.gexp(partial.ps) != msg.ps_commitment:
        raise DerivationRefused("partial secret does not match its published commitment")
    return DeviceKeyPair(DevicePublicKey(secret.id, msg.U, msg.R), partial.ps, secret.x)


def register_device(kgd: KGD, device_id: str, rng: Rng | None = None) -> DeviceKeyPair:
    """Whole registration flow: device secret, issuance, verification, derivation."""
    secret = gen_device_secret(kgd.system, device_id, rng)
    partial = gen_partial_secret(kgd, device_id, secret.commitment)
    return derive_keys(kgd.public, partial, secret)


# -- transaction signatures -------------------------------------------------

def _tx_challenge(g: Group, T, Q, pk: DevicePublicKey, device_id: str, msg: bytes) -> int:
    return challenge(g, "fdd/tx", T, g.encode(Q), g.encode(pk.U), g.encode(pk.R), _id_bytes(device_id), msg)


def sign_tx(public: PublicParams, keys: DeviceKeyPair, msg: bytes, rng: Rng | None = None) -> bytes:
    g = public.group
    sk = keys.scalar(g.q)
    Q = public_point(public, keys.pk)
    t = hedged_nonce(g, sk, msg, rng)
    T = g.gexp(t)
    c = _tx_challenge(g, T, Q, keys.pk, keys.id, msg)
    return Signature(T, (t + c * sk) % g.q).encode(g)


def verify_tx_sig(public: PublicParams, pk: DevicePublicKey, device_id: str, msg: bytes,
                  sig: bytes) -> bool:
    g = public.group
    try:
        s = Signature.decode(g, sig)
        if not (g.is_element(pk.U) and g.is_element(pk.R)):
            return False
        Q = public_point(public, pk, device_id)
        c = _tx_challenge(g, s.T, Q, pk, device_id, msg)
        return g.gexp(s.z) == g.mul(s.T, g.exp(Q, c))
    except (WireError, GroupError, TypeError, ValueError):
        return False


# -- data-pointer encryption ------------------------------------------------

def _pointer_key(g: Group, shared, E, Q) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=None,
                info=b"fdd/pointer" + g.encode(E) + g.encode(Q)).derive(g.encode(shared))


def encrypt_pointer(public: PublicParams, pk: DevicePublicKey, device_id: str | bytes,
                    rng: Rng | None = None) -> bytes:
    rng = rng or system_rng()
    g = public.group
    Q = public_point(public, pk)
    e = g.random_scalar(rng)
    E = g.gexp(e)
    key = _pointer_key(g, g.exp(Q, e), E, Q)
    nonce = rng.randbytes(12)
    ct = AESGCM(key).encrypt(nonce, _id_bytes(device_id), g.encode(E))
    return encode_fields(PTR_TAG, [g.encode(E), nonce, ct])


def decrypt_pointer(public: PublicParams, keys: DeviceKeyPair, pointer: bytes) -> str:
    g = public.group
    try:
        e_raw, nonce, ct = decode_fields(PTR_TAG, pointer, 3)
        E = g.decode(e_raw)
        Q = public_point(public, keys.pk)
        key = _pointer_key(g, g.exp(E, keys.scalar(g.q)), E, Q)
        return AESGCM(key).decrypt(nonce, ct, e_raw).decode()
    except (InvalidTag, WireError, GroupError, ValueError) as exc:
        raise PointerDecryptionError("data pointer failed authenticated decryption") from exc
