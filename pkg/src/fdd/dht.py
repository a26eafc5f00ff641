"""Content-addressed replicated storage with Kademlia-style XOR placement.

Placement uses a global membership view (no iterative lookups): an address
lives on the ``k`` live nodes whose ids are XOR-closest to it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

NODE_MAGIC = b"FDN1"


class DHTError(Exception):
    pass


class StorageUnavailable(DHTError):
    pass


class NotFound(DHTError):
    pass


class IntegrityFailure(DHTError):
    pass


def content_address(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def node_id_for(name: str) -> bytes:
    return hashlib.sha256(b"fdd/node/" + name.encode()).digest()


def xor_distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


@dataclass
class StorageNode:
    node_id: bytes
    name: str = ""
    store: dict[bytes, bytes] = field(default_factory=dict)
    alive: bool = True

    def corrupt_entries(self) -> list[bytes]:
        return [a for a, v in self.store.items() if content_address(v) != a]

    def encode(self) -> bytes:
        out = [NODE_MAGIC, struct.pack("<I", len(self.store))]
        for addr in sorted(self.store):
            v = self.store[addr]
            out += [addr, struct.pack("<I", len(v)), v]
        return b"".join(out)

    @classmethod
    def decode(cls, node_id: bytes, data: bytes, name: str = "") -> "StorageNode":
        if data[:4] != NODE_MAGIC:
            raise DHTError("not a storage node file")
        (count,), pos = struct.unpack_from("<I", data, 4), 8
        store = {}
        for _ in range(count):
            addr = data[pos:pos + 32]
            (ln,) = struct.unpack_from("<I", data, pos + 32)
            pos += 36
            store[addr] = data[pos:pos + ln]
            pos += ln
            if len(addr) != 32 or pos > len(data):
                raise DHTError("truncated storage node file")
        if pos != len(data):
            raise DHTError("trailing bytes in storage node file")
        return cls(node_id, name, store)


@dataclass(frozen=True)
class RepairEvent:
    kind: str  # copied | dropped | corrupt-removed
    address: bytes
    node: str


@dataclass
class RepairReport:
    events: list[RepairEvent] = field(default_factory=list)
    under_replicated: list[bytes] = field(default_factory=list)
    lost: list[bytes] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.events or self.under_replicated or self.lost)

    def count(self, kind: str) -> int:
        return sum(e.kind == kind for e in self.events)


class DHT:
    """A ring of storage nodes with k-way replication."""

    def __init__(self, names=(), k: int = 3):
        if k < 1:
            raise ValueError("replication factor must be >= 1")
        self.k = k
        self.nodes: dict[str, StorageNode] = {}
        self.log: list[RepairEvent] = []
        self._changed = False
        for name in names:
            self.join(name)

    @classmethod
    def with_nodes(cls, count: int, k: int = 3) -> "DHT":
        return cls([f"node-{i}" for i in range(count)], k)

    # -- membership ---------------------------------------------------------------

    def join(self, name: str) -> StorageNode:
        if name in self.nodes:
            raise DHTError(f"node {name!r} already present")
        node = StorageNode(node_id_for(name), name)
        self.nodes[name] = node
        self._changed = True
        return node

    def kill(self, name: str) -> None:
        self.nodes[name].alive = False
        self._changed = True

    def revive(self, name: str) -> None:
        self.nodes[name].alive = True
        self._changed = True

    def live(self) -> list[StorageNode]:
        return [n for n in self.nodes.values() if n.alive]

    def replica_set(self, address: bytes) -> list[StorageNode]:
        ranked = sorted(self.live(), key=lambda n: xor_distance(n.node_id, address))
        return ranked[:self.k]

    # -- data path -----------------------------------------------------------------

    def put(self, payload: bytes) -> bytes:
        if not payload:
            raise ValueError("payload must be non-empty")
        members = self.replica_set(content_address(payload))
        if not members:
            raise StorageUnavailable("no live storage node")
        addr = content_address(payload)
        for node in members:
            node.store[addr] = bytes(payload)
        return addr

    def get(self, address: bytes) -> bytes:
        """Return the payload from the nearest sound replica; corrupt copies are replaced."""
        holders = sorted((n for n in self.live() if address in n.store),
                         key=lambda n: xor_distance(n.node_id, address))
        if not holders:
            raise NotFound(address.hex())
        good, bad = None, []
        for node in holders:
            value = node.store[address]
            if content_address(value) == address:
                good = value
                break
            bad.append(node)
        for node in bad:
            del node.store[address]
            self._event("corrupt-removed", address, node)
        if good is None:
            raise IntegrityFailure(address.hex())
        for node in self.replica_set(address):
            if node.store.get(address) != good:
                node.store[address] = good
                self._event("copied", address, node)
        return good

    def mark_stored(self, receipt, address: bytes) -> bool:
        """Ledger confirmation hook: set the receipt's S flag once committed and stored."""
        ok = getattr(receipt, "status", None) == "committed" and any(
            address in n.store for n in self.live())
        if ok:
            receipt.stored = True
        return ok

    # -- maintenance ---------------------------------------------------------------

    def rebalance(self) -> RepairReport:
        """Restore min(k, live) sound replicas of every address on its nearest live nodes."""
        report = RepairReport()
        if not self._changed and not any(n.corrupt_entries() for n in self.live()):
            return report
        self._changed = False
        live = self.live()
        for node in live:
            for addr in node.corrupt_entries():
                del node.store[addr]
                report.events.append(self._event("corrupt-removed", addr, node))
        addresses = sorted({a for n in live for a in n.store})
        for addr in addresses:
            value = next(n.store[addr] for n in live if addr in n.store)
            members = self.replica_set(addr)
            names = {m.name for m in members}
            for node in members:
                if addr not in node.store:
                    node.store[addr] = value
                    report.events.append(self._event("copied", addr, node))
            for node in live:
                if node.name not in names and addr in node.store:
                    del node.store[addr]
                    report.events.append(self._event("dropped", addr, node))
            if len(members) < self.k:
                report.under_replicated.append(addr)
        known = {a for n in self.nodes.values() for a in n.store}
        report.lost = sorted(known - set(addresses))
        return report

    def scan(self) -> list[tuple[str, bytes]]:
        """(node, address) pairs whose stored bytes no longer hash to their key."""
        return [(n.name, a) for n in self.nodes.values() for a in n.corrupt_entries()]

    def corrupt(self, name: str, address: bytes, bit: int = 0) -> None:
        """Flip one bit of a stored replica (fault injection)."""
        value = bytearray(self.nodes[name].store[address])
        value[(bit // 8) % len(value)] ^= 1 << (bit % 8)
        self.nodes[name].store[address] = bytes(value)

    def stats(self) -> dict:
        live = self.live()
        addresses = {a for n in live for a in n.store}
        return {
            "k": self.k,
            "nodes": len(self.nodes),
            "live": len(live),
            "addresses": len(addresses),
            "replicas": sum(len(n.store) for n in live),
            "bytes": sum(len(v) for n in live for v in n.store.values()),
            "repairs": len(self.log),
        }

    def _event(self, kind: str, address: bytes, node: StorageNode) -> RepairEvent:
        ev = RepairEvent(kind, address, node.name)
        self.log.append(ev)
        return ev

    # -- persistence ---------------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = [f"k={self.k}"]
        for name, node in sorted(self.nodes.items()):
            (d / f"{name}.node").write_bytes(node.encode())
            meta.append(f"{name} {'up' if node.alive else 'down'}")
        (d / "members.txt").write_text("\n".join(meta) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "DHT":
        d = Path(directory)
        lines = (d / "members.txt").read_text().split("\n")
        dht = cls(k=int(lines[0].removeprefix("k=")))
        for line in filter(None, lines[1:]):
            name, status = line.split()
            node = StorageNode.decode(node_id_for(name), (d / f"{name}.node").read_bytes(), name)
            node.alive = status == "up"
            dht.nodes[name] = node
        return dht
