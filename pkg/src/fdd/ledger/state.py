"""World state, transaction checks (V1 identity, V2 signature) and the two state handlers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from ..certless import (
    DevicePublicKey,
    IssuanceMessage,
    MultiSignature,
    Outcome,
    PublicParams,
    verify_issuance,
    verify_tx_sig,
)
from ..certless.group import GroupError
from ..certless.wire import WireError
from ..reputation import ReputationPolicy
from .codec import DecodeError, Reader, Writer
from .tx import Action, LedgerTransaction, SignedTx

SKEW_MS = 30_000


@dataclass(frozen=True)
class DeviceEntry:
    pk: bytes
    issuance: bytes
    registered_at: int
    R: float = 0.5
    D: float = 0.0
    S: bool = False
    quarantined: bool = False


@dataclass(frozen=True)
class AdsEntry:
    owner: str
    acl: tuple[tuple[str, str], ...]
    pointer: bytes
    height: int
    tx_digest: bytes
    version: int = 1


@dataclass(frozen=True)
class AclDecision:
    permit: bool
    reason: str


@dataclass
class WorldState:
    devices: dict[str, DeviceEntry] = field(default_factory=dict)
    records: dict[bytes, AdsEntry] = field(default_factory=dict)
    tx_index: dict[bytes, int] = field(default_factory=dict)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    height: int = 0

    def copy(self) -> "WorldState":
        return WorldState(dict(self.devices), dict(self.records), dict(self.tx_index),
                          list(self.events), self.height)

    def encode(self) -> bytes:
        """Canonical bytes; two states are equal iff these are equal."""
        w = Writer().raw(b"FWS1").u64(self.height)
        w.u32(len(self.devices))
        for k in sorted(self.devices):
            d = self.devices[k]
            w.text(k).blob(d.pk).blob(d.issuance).u64(d.registered_at)
            w.f64(d.R).f64(d.D).u8(d.S).u8(d.quarantined)
        w.u32(len(self.records))
        for k in sorted(self.records):
            a = self.records[k]
            w.blob(k).text(a.owner).u32(len(a.acl))
            for i, p in a.acl:
                w.text(i).text(p)
            w.blob(a.pointer).u64(a.height).blob(a.tx_digest).u32(a.version)
        w.u32(len(self.tx_index))
        for k in sorted(self.tx_index):
            w.blob(k).u64(self.tx_index[k])
        w.u32(len(self.events))
        for h, kind, detail in self.events:
            w.u64(h).text(kind).text(detail)
        return w.getvalue()

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "devices": {k: {"R": d.R, "D": d.D, "S": d.S, "quarantined": d.quarantined,
                            "registered_at": d.registered_at, "pk": d.pk.hex()}
                        for k, d in sorted(self.devices.items())},
            "records": {k.hex(): {"owner": a.owner, "acl": [list(e) for e in a.acl], "height": a.height,
                                  "version": a.version, "tx": a.tx_digest.hex()}
                        for k, a in sorted(self.records.items())},
            "events": [list(e) for e in self.events],
        }


# -- verification ------------------------------------------------------------

@dataclass(frozen=True)
class Flags:
    V1: bool
    V2: bool
    reason: str = ""
    S: bool = False

    def passes(self, strict_or: bool = False) -> bool:
        return (self.V1 or self.V2) if strict_or else (self.V1 and self.V2)


def encode_registration(public: PublicParams, msg: IssuanceMessage, sigma: MultiSignature) -> bytes:
    g = public.group
    return Writer().blob(msg.encode(g)).blob(sigma.encode(g)).getvalue()


def decode_registration(public: PublicParams, body: bytes) -> tuple[IssuanceMessage, MultiSignature]:
    g = public.group
    r = Reader(body)
    m, s = r.blob(), r.blob()
    r.done()
    return IssuanceMessage.decode(g, m), MultiSignature.decode(g, s)


class Verifier:
    """Stateless checks plus a cache of (pure) signature results."""

    def __init__(self, public: PublicParams, skew_ms: int = SKEW_MS, strict_or: bool = False):
        self.public = public
        self.skew_ms = skew_ms
        self.strict_or = strict_or
        self._sig_cache: dict[tuple[bytes, bytes, bytes], bool] = {}

    def decode_pk(self, raw: bytes) -> DevicePublicKey | None:
        try:
            return DevicePublicKey.decode(self.public.group, raw)
        except (WireError, GroupError, UnicodeDecodeError):
            return None

    def verify_identity(self, state: WorldState, device_id: str, pk: DevicePublicKey | None) -> bool:
        entry = state.devices.get(device_id)
        if entry is None or pk is None or pk.id != device_id:
            return False
        return entry.pk == pk.encode(self.public.group)

    def verify_registration(self, state: WorldState, tx: LedgerTransaction, pk: DevicePublicKey | None) -> bool:
        if pk is None or tx.id in state.devices or pk.id != tx.id:
            return False
        try:
            msg, sigma = decode_registration(self.public, tx.body)
        except (DecodeError, WireError, GroupError, UnicodeDecodeError):
            return False
        if (msg.id, msg.U, msg.R) != (tx.id, pk.U, pk.R):
            return False
        return verify_issuance(msg, sigma, self.public) is Outcome.ACCEPT

    def verify_tx(self, env: SignedTx, tx: LedgerTransaction, pk: DevicePublicKey | None,
                  ref_ms: float) -> tuple[bool, str]:
        if pk is None:
            return False, "bad-key"
        if abs(tx.timestamp - ref_ms) > self.skew_ms:
            return False, "stale"
        key = (env.tx_bytes, env.sig, env.pk)
        ok = self._sig_cache.get(key)
        if ok is None:
            ok = verify_tx_sig(self.public, pk, tx.id, env.tx_bytes, env.sig)
            self._sig_cache[key] = ok
        return ok, "" if ok else "bad-signature"

    def check(self, state: WorldState, env: SignedTx, ref_ms: float) -> Flags:
        try:
            tx = env.tx
        except DecodeError:
            return Flags(False, False, "malformed")
        if env.digest in state.tx_index:
            return Flags(False, False, "duplicate")
        pk = self.decode_pk(env.pk)
        if tx.action is Action.REGISTER:
            v1 = self.verify_registration(state, tx, pk)
        else:
            v1 = self.verify_identity(state, tx.id, pk)
        v2, why = self.verify_tx(env, tx, pk, ref_ms)
        reason = why or ("" if v1 else "identity")
        return Flags(v1, v2, reason)


# -- handlers ---------------------------------------------------------------

def apply_acl(state: WorldState, ads: bytes, requester: str) -> AclDecision:
    rec = state.records.get(bytes(ads))
    if rec is None:
        return AclDecision(False, "not-found")
    if requester == rec.owner or any(i == requester and p in ("access", "owner") for i, p in rec.acl):
        return AclDecision(True, "permit")
    return AclDecision(False, "deny")


def registration_handler(state: WorldState, tx: LedgerTransaction, env: SignedTx, height: int) -> None:
    state.devices[tx.id] = DeviceEntry(env.pk, tx.body, height)


def _quarantine(entry: DeviceEntry, R: float, policy: ReputationPolicy) -> bool:
    if entry.quarantined:
        return not R > policy.floor + policy.hysteresis
    return R < policy.floor


def data_handler(state: WorldState, tx: LedgerTransaction, height: int,
                 policy: ReputationPolicy = ReputationPolicy()) -> None:
    dev = state.devices.get(tx.id)
    if dev is None:
        # only reachable when commits use the permissive V1-or-V2 rule
        state.events.append((height, "rejected-unregistered", tx.digest.hex()[:16]))
        return
    rep = tx.reputation
    dev = replace(dev, R=rep.R, D=rep.D, S=rep.S, quarantined=_quarantine(dev, rep.R, policy))
    state.devices[tx.id] = dev
    tag = tx.digest.hex()[:16]
    if tx.action is Action.ACCESS:
        d = apply_acl(state, tx.ads, tx.id)
        state.events.append((height, "access-" + d.reason, f"{tx.id} {tx.ads.hex()[:16]}"))
        return
    if dev.quarantined:
        state.events.append((height, "rejected-quarantined", tag))
        return
    rec = state.records.get(tx.ads)
    if tx.action is Action.STORE:
        if rec is not None and rec.owner != tx.id:
            state.events.append((height, "rejected-owned", tag))
            return
        version = rec.version + 1 if rec else 1
        state.records[tx.ads] = AdsEntry(tx.id, tx.acl, tx.payload_pointer, height, tx.digest, version)
    elif tx.action is Action.UPDATE:
        if rec is None:
            state.events.append((height, "rejected-not-found", tag))
            return
        if tx.id != rec.owner and not any(i == tx.id and p == "update" for i, p in rec.acl):
            state.events.append((height, "rejected-acl", tag))
            return
        acl = tx.acl if tx.id == rec.owner and tx.acl else rec.acl
        state.records[tx.ads] = AdsEntry(rec.owner, acl, tx.payload_pointer or rec.pointer,
                                         height, tx.digest, rec.version + 1)


def apply_tx(state: WorldState, env: SignedTx, height: int) -> LedgerTransaction:
    tx = env.tx
    if tx.action is Action.REGISTER:
        registration_handler(state, tx, env, height)
    else:
        data_handler(state, tx, height)
    state.tx_index[env.digest] = height
    return tx
