"""Ledger transactions and their canonical serialization."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from enum import IntEnum

from .codec import DecodeError, Reader, Writer

TX_MAGIC = b"FTX1"
ENV_MAGIC = b"FEN1"


class TxRejected(ValueError):
    pass


class SubmissionRefused(RuntimeError):
    pass


class Action(IntEnum):
    REGISTER = 0
    STORE = 1
    UPDATE = 2
    ACCESS = 3

    @classmethod
    def parse(cls, value) -> "Action":
        if isinstance(value, cls):
            return value
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise TxRejected(f"unknown action {value!r}") from None


PERMISSIONS = ("owner", "access", "update")


@dataclass(frozen=True)
class ReputationSnapshot:
    R: float = 0.5
    D: float = 0.0
    S: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.R) and 0.0 <= self.R <= 1.0):
            raise TxRejected("reputation level must lie in [0, 1]")
        if not (math.isfinite(self.D) and 0.0 <= self.D <= 100.0):
            raise TxRejected("detection level must lie in [0, 100]")


@dataclass(frozen=True)
class LedgerTransaction:
    id: str
    timestamp: int
    action: Action
    ads: bytes = b""
    acl: tuple[tuple[str, str], ...] = ()
    payload_pointer: bytes = b""
    reputation: ReputationSnapshot = ReputationSnapshot()
    body: bytes = b""  # registration material for REGISTER

    def encode(self) -> bytes:
        w = Writer().raw(TX_MAGIC).text(self.id).i64(self.timestamp).u8(self.action).blob(self.ads)
        w.u32(len(self.acl))
        for ident, perm in self.acl:
            w.text(ident).text(perm)
        w.blob(self.payload_pointer)
        w.f64(self.reputation.R).f64(self.reputation.D).u8(int(self.reputation.S))
        w.blob(self.body)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "LedgerTransaction":
        r = Reader(data)
        if r.raw(4) != TX_MAGIC:
            raise DecodeError("not a transaction")
        ident, ts, act, ads = r.text(), r.i64(), r.u8(), r.blob()
        acl = tuple((r.text(), r.text()) for _ in range(r.u32()))
        ptr = r.blob()
        rep_r, rep_d, rep_s = r.f64(), r.f64(), r.u8()
        body = r.blob()
        r.done()
        if rep_s not in (0, 1):
            raise DecodeError("bad boolean")
        try:
            tx = cls(ident, ts, Action(act), ads, acl, ptr, ReputationSnapshot(rep_r, rep_d, bool(rep_s)), body)
        except (ValueError, TxRejected) as exc:
            raise DecodeError(str(exc)) from exc
        if tx.encode() != bytes(data):
            raise DecodeError("non-canonical transaction")
        return tx

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    def permits(self, requester: str, perm: str) -> bool:
        return any(i == requester and p in (perm, "owner") for i, p in self.acl)


def normalise_acl(acl) -> tuple[tuple[str, str], ...]:
    out = set()
    for entry in acl or ():
        ident, perm = entry
        if perm not in PERMISSIONS:
            raise TxRejected(f"unknown permission {perm!r}")
        out.add((str(ident), perm))
    return tuple(sorted(out))


def create_tx(device_id: str, acl, action, ads: bytes = b"", payload_pointer: bytes = b"",
              reputation: ReputationSnapshot | tuple | None = None, *, timestamp: int,
              state=None, body: bytes = b"") -> LedgerTransaction:
    """Unsigned transaction in canonical form.

    With ``state`` (a world state) the device must be registered and not
    quarantined.
    """
    act = Action.parse(action)
    ads = bytes(ads)
    acl = normalise_acl(acl)
    if act in (Action.STORE, Action.UPDATE):
        if len(ads) != 32:
            raise TxRejected(f"{act.name.lower()} requires a 32-byte content address")
        if act is Action.STORE:
            acl = normalise_acl(acl + ((device_id, "owner"),))
    elif act is Action.ACCESS:
        if len(ads) != 32:
            raise TxRejected("access requires a 32-byte content address")
        if not any(i == device_id and p in ("access", "owner") for i, p in acl):
            raise TxRejected("requester is not in the access list")
    elif act is Action.REGISTER and not body:
        raise TxRejected("registration needs issuance material")
    if reputation is None:
        reputation = ReputationSnapshot()
    elif not isinstance(reputation, ReputationSnapshot):
        reputation = ReputationSnapshot(*reputation)
    if state is not None:
        entry = state.devices.get(device_id)
        if act is Action.REGISTER:
            if entry is not None:
                raise SubmissionRefused(f"{device_id} is already registered")
        elif entry is None:
            raise SubmissionRefused(f"{device_id} is not registered")
        elif entry.quarantined:
            raise SubmissionRefused(f"{device_id} is quarantined")
    return LedgerTransaction(device_id, int(timestamp), act, ads, acl, bytes(payload_pointer), reputation, body)


@dataclass(frozen=True)
class SignedTx:
    """A transaction as broadcast: canonical bytes, signature and the claimed public key."""

    tx_bytes: bytes
    sig: bytes
    pk: bytes

    @cached_property
    def _encoded(self) -> bytes:
        return Writer().raw(ENV_MAGIC).blob(self.tx_bytes).blob(self.sig).blob(self.pk).getvalue()

    def encode(self) -> bytes:
        return self._encoded

    @classmethod
    def decode_from(cls, r: Reader) -> "SignedTx":
        if r.raw(4) != ENV_MAGIC:
            raise DecodeError("not a signed transaction")
        return cls(r.blob(), r.blob(), r.blob())

    # envelopes are immutable, so the digest and decoded body are computed once
    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.tx_bytes).digest()

    @cached_property
    def tx(self) -> LedgerTransaction:
        return LedgerTransaction.decode(self.tx_bytes)
