"""Blocks, quorum certificates, genesis configuration and whole-chain checks."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..certless import PublicParams, SystemParams, schnorr_sign, schnorr_verify
from ..certless.group import ModPGroup, setup
from ..certless.schnorr import bitmap_of, signers_of
from .codec import DecodeError, Reader, Writer
from .state import SKEW_MS, Verifier, WorldState, apply_tx
from .tx import SignedTx

BLOCK_MAGIC = b"FBK1"
CHAIN_MAGIC = b"FCH1"


class IntegrityViolation(Exception):
    def __init__(self, height: int, reason: str):
        super().__init__(f"integrity violation at height {height}: {reason}")
        self.height = height
        self.reason = reason


def _h(tag: bytes, data: bytes) -> bytes:
    return hashlib.sha256(tag + data).digest()


def merkle_root(leaves: list[bytes]) -> bytes:
    """Binary Merkle tree; an odd node is promoted unchanged, never duplicated."""
    if not leaves:
        return hashlib.sha256(b"").digest()
    level = [_h(b"\x00", x) for x in leaves]
    while len(level) > 1:
        nxt = [_h(b"\x01", level[i] + level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def pointers_root(pointers: list[tuple[bytes, bytes]]) -> bytes:
    w = Writer()
    for d, a in pointers:
        w.blob(d).blob(a)
    return hashlib.sha256(w.getvalue()).digest()


def commit_message(view: int, height: int, digest: bytes) -> bytes:
    return Writer().raw(b"fdd/commit").u32(view).u64(height).raw(digest).getvalue()


@dataclass(frozen=True)
class QuorumCert:
    view: int = 0
    bitmap: bytes = b""
    sigs: tuple[bytes, ...] = ()

    @property
    def signers(self) -> list[int]:
        return signers_of(self.bitmap)

    def encode(self) -> bytes:
        w = Writer().u32(self.view).blob(self.bitmap).u32(len(self.sigs))
        for s in self.sigs:
            w.blob(s)
        return w.getvalue()

    @classmethod
    def decode_from(cls, r: Reader) -> "QuorumCert":
        view, bm = r.u32(), r.blob()
        return cls(view, bm, tuple(r.blob() for _ in range(r.u32())))

    @classmethod
    def build(cls, view: int, votes: dict[int, bytes], n: int) -> "QuorumCert":
        idx = sorted(votes)
        return cls(view, bitmap_of(idx, n), tuple(votes[i] for i in idx))

    def verify(self, public: PublicParams, f: int, height: int, digest: bytes) -> bool:
        signers = self.signers
        n = public.n
        if len(self.bitmap) != (n + 7) // 8 or any(i >= n for i in signers):
            return False
        if len(signers) != len(self.sigs) or len(signers) < 2 * f + 1:
            return False
        msg = commit_message(self.view, height, digest)
        g = public.group
        return all(schnorr_verify(g, public.cosigner_publics[i], msg, s) for i, s in zip(signers, self.sigs))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    txs: tuple[SignedTx, ...] = ()
    qc: QuorumCert = field(default_factory=QuorumCert)

    @property
    def tx_pointers(self) -> list[tuple[bytes, bytes]]:
        out = []
        for env in self.txs:
            ads = env.tx.ads
            if ads:
                out.append((env.digest, ads))
        return out

    @property
    def merkle_root(self) -> bytes:
        return merkle_root([e.encode() for e in self.txs])

    def header(self) -> bytes:
        return (Writer().raw(BLOCK_MAGIC).u64(self.height).raw(self.prev_hash).raw(self.merkle_root)
                .raw(pointers_root(self.tx_pointers)).i64(self.timestamp).getvalue())

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.header()).digest()

    def with_qc(self, qc: QuorumCert) -> "Block":
        return Block(self.height, self.prev_hash, self.timestamp, self.txs, qc)

    def encode(self) -> bytes:
        w = Writer().raw(self.header()).u32(len(self.txs))
        for env in self.txs:
            w.raw(env.encode())
        w.raw(self.qc.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        if r.raw(4) != BLOCK_MAGIC:
            raise DecodeError("not a block")
        height, prev, merkle, ptrs, ts = r.u64(), r.raw(32), r.raw(32), r.raw(32), r.i64()
        txs = tuple(SignedTx.decode_from(r) for _ in range(r.u32()))
        qc = QuorumCert.decode_from(r)
        r.done()
        blk = cls(height, prev, ts, txs, qc)
        if blk.merkle_root != merkle:
            raise DecodeError("merkle root mismatch")
        if pointers_root(blk.tx_pointers) != ptrs:
            raise DecodeError("tx pointer root mismatch")
        if blk.encode() != bytes(data):
            raise DecodeError("non-canonical block")
        return blk

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "hash": self.digest.hex(),
            "prev_hash": self.prev_hash.hex(),
            "timestamp": self.timestamp,
            "merkle_root": self.merkle_root.hex(),
            "txs": [{"digest": e.digest.hex(), "id": e.tx.id, "action": e.tx.action.name,
                     "ads": e.tx.ads.hex()} for e in self.txs],
            "qc": {"view": self.qc.view, "signers": self.qc.signers},
        }


# -- genesis -------------------------------------------------------------------

@dataclass(frozen=True)
class GenesisConfig:
    system: SystemParams
    cosigner_publics: tuple
    f: int = 1
    quorum: int | None = None
    skew_ms: int = SKEW_MS
    or_flags: bool = False
    epoch_ms: int = 0

    def __post_init__(self):
        if len(self.cosigner_publics) < 3 * self.f + 1:
            raise ValueError("need n >= 3f + 1 peers")

    @property
    def n(self) -> int:
        return len(self.cosigner_publics)

    @property
    def public(self) -> PublicParams:
        q = self.n if self.quorum is None else self.quorum
        return PublicParams(self.system, tuple(self.cosigner_publics), q)

    def encode(self) -> bytes:
        g = self.system.group
        w = Writer().raw(b"FGN1").text(json.dumps(self.system.describe(), sort_keys=True))
        w.u32(self.n)
        for p in self.cosigner_publics:
            w.blob(g.encode(p))
        w.u32(self.f).u32(self.public.quorum).u64(self.skew_ms).u8(self.or_flags).i64(self.epoch_ms)
        return w.getvalue()

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    def block(self) -> Block:
        return Block(0, self.digest(), self.epoch_ms)

    def verifier(self) -> Verifier:
        return Verifier(self.public, self.skew_ms, self.or_flags)

    def to_json(self) -> dict:
        g = self.system.group
        return {
            "group": self.system.describe(),
            "cosigners": [g.encode(p).hex() for p in self.cosigner_publics],
            "n": self.n,
            "f": self.f,
            "quorum": self.public.quorum,
            "skew_ms": self.skew_ms,
            "or_flags": self.or_flags,
            "epoch_ms": self.epoch_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GenesisConfig":
        desc = obj["group"]
        if desc["kind"] == "modp":
            system = SystemParams(ModPGroup(int(desc["p"]), int(desc["q"]), int(desc["g"])))
        elif desc["kind"] == "secp256k1":
            system = setup("standard")
        else:
            raise ValueError(f"unknown group kind {desc['kind']!r}")
        g = system.group
        pubs = tuple(g.decode(bytes.fromhex(h)) for h in obj["cosigners"])
        if "n" in obj and obj["n"] != len(pubs):
            raise ValueError("peer count does not match cosigner list")
        return cls(system, pubs, int(obj.get("f", 1)), obj.get("quorum"), int(obj.get("skew_ms", SKEW_MS)),
                   bool(obj.get("or_flags", False)), int(obj.get("epoch_ms", 0)))


# -- chain-level checks ----------------------------------------------------------

def validate_block(block: Block, prev: Block, state: WorldState, verifier: Verifier,
                   now_ms: float | None = None) -> WorldState:
    """Check ``block`` against its parent and return the successor state.

    Raises :class:`IntegrityViolation` naming the block height.
    """
    h = block.height
    if h != prev.height + 1:
        raise IntegrityViolation(h, "height is not sequential")
    if block.prev_hash != prev.digest:
        raise IntegrityViolation(h, "previous-hash link broken")
    if block.timestamp < prev.timestamp:
        raise IntegrityViolation(h, "timestamp regression")
    if now_ms is not None and block.timestamp > now_ms + verifier.skew_ms:
        raise IntegrityViolation(h, "timestamp in the future")
    nxt = state.copy()
    seen = set()
    for env in block.txs:
        if env.digest in seen:
            raise IntegrityViolation(h, "duplicate transaction")
        seen.add(env.digest)
        flags = verifier.check(nxt, env, block.timestamp)
        if not flags.passes(verifier.strict_or):
            raise IntegrityViolation(h, f"transaction failed verification ({flags.reason})")
        apply_tx(nxt, env, h)
    nxt.height = h
    return nxt


def verify_chain(blocks: list[Block], genesis: GenesisConfig) -> WorldState:
    """Full check from genesis: links, Merkle roots, quorum certificates, V1/V2; returns replayed state."""
    if not blocks:
        return WorldState()
    g0 = blocks[0]
    if g0.encode() != genesis.block().encode():
        raise IntegrityViolation(0, "genesis block does not match configuration")
    verifier = genesis.verifier()
    state = WorldState()
    for prev, blk in zip(blocks, blocks[1:]):
        state = validate_block(blk, prev, state, verifier)
        if not blk.qc.verify(genesis.public, genesis.f, blk.height, blk.digest):
            raise IntegrityViolation(blk.height, "quorum certificate invalid")
    return state


def replay_world_state(blocks: list[Block], genesis: GenesisConfig) -> WorldState:
    return verify_chain(blocks, genesis)


def encode_chain(blocks: list[Block]) -> bytes:
    w = Writer().raw(CHAIN_MAGIC)
    for b in blocks:
        w.blob(b.encode())
    return w.getvalue()


def decode_chain(data: bytes) -> list[Block]:
    """Strict decode; a malformed block raises IntegrityViolation at its height.

    Blocks follow the magic until the end of input, so there is no count
    field whose corruption could not be pinned to a block.
    """
    r = Reader(data)
    try:
        if r.raw(4) != CHAIN_MAGIC:
            raise IntegrityViolation(0, "not a chain file")
    except DecodeError as exc:
        raise IntegrityViolation(0, str(exc)) from exc
    blocks = []
    while r.pos < len(r.data):
        h = len(blocks)
        try:
            blk = Block.decode(r.blob())
        except DecodeError as exc:
            raise IntegrityViolation(h, str(exc)) from exc
        if blk.height != h:
            raise IntegrityViolation(h, "height is not sequential")
        blocks.append(blk)
    return blocks


def save_chain(blocks: list[Block], path: str | Path) -> None:
    Path(path).write_bytes(encode_chain(blocks))


def load_chain(path: str | Path) -> list[Block]:
    return decode_chain(Path(path).read_bytes())


def sign_commit(cosigner, view: int, height: int, digest: bytes, rng=None) -> bytes:
    return schnorr_sign(cosigner.group, cosigner.key.secret, commit_message(view, height, digest), rng).encode(cosigner.group)
