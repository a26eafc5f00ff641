"""PBFT replica over the simulated network.

Three phases (pre-prepare, prepare, commit) per height, a round-robin leader
per view, and a view change when a timer expires without progress.  A block's
digest covers its header only, so the same block can be re-proposed in a
later view; commit votes and certificates carry the view they were cast in.

Simplifications: no checkpoints or log truncation, view-change messages are
trusted when relayed inside NEW-VIEW (channels are authenticated), and a
replica that learns a commit certificate for a block it never saw fetches
that block from a certifying peer.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from ..certless import schnorr_verify
from ..sim import Network, Processor, Simulator
from .block import Block, GenesisConfig, IntegrityViolation, QuorumCert, commit_message, sign_commit, validate_block
from .state import Flags, WorldState, apply_acl, apply_tx
from .tx import SignedTx


# -- messages -------------------------------------------------------------------

@dataclass(frozen=True)
class SubmitTx:
    env: SignedTx
    attempt: int = 1


@dataclass(frozen=True)
class TxAck:
    digest: bytes
    accepted: bool
    flags: Flags


@dataclass(frozen=True)
class CommitReply:
    digest: bytes
    height: int
    block: bytes


@dataclass(frozen=True)
class PrePrepare:
    view: int
    block: Block


@dataclass(frozen=True)
class Prepare:
    view: int
    height: int
    digest: bytes


@dataclass(frozen=True)
class Commit:
    view: int
    height: int
    digest: bytes
    sig: bytes


@dataclass(frozen=True)
class ViewChange:
    new_view: int
    height: int  # the sender's next height
    prepared_view: int = -1
    prepared: Block | None = None


@dataclass(frozen=True)
class NewView:
    view: int
    proofs: tuple  # ((peer, ViewChange), ...)
    preprepare: PrePrepare | None = None


@dataclass(frozen=True)
class Fetch:
    height: int


@dataclass(frozen=True)
class BlockReply:
    block: Block
    tip: int


@dataclass(frozen=True)
class Query:
    qid: int
    kind: str  # "record" | "device" | "acl"
    key: bytes | str
    requester: str = ""


@dataclass(frozen=True)
class QueryReply:
    qid: int
    found: bool
    value: object = None


class Behavior(str, Enum):
    HONEST = "honest"
    SILENT = "silent"          # crashed / mute byzantine
    EQUIVOCATE = "equivocate"  # as leader, sends conflicting proposals


@dataclass
class PeerCosts:
    """Simulated CPU milliseconds per message kind (zero means instant)."""

    submit: float = 0.0
    preprepare_base: float = 0.0
    preprepare_per_tx: float = 0.0
    vote: float = 0.0
    query: float = 0.0
    other: float = 0.0
    shed: float = 0.0
    queue_limit: int = 0  # client requests are dropped at this backlog; 0 = unbounded

    def of(self, msg) -> float:
        if isinstance(msg, SubmitTx):
            return self.submit
        if isinstance(msg, PrePrepare):
            return self.preprepare_base + self.preprepare_per_tx * len(msg.block.txs)
        if isinstance(msg, (Prepare, Commit)):
            return self.vote
        if isinstance(msg, Query):
            return self.query
        return self.other

    @property
    def zero(self) -> bool:
        return not any((self.submit, self.preprepare_base, self.preprepare_per_tx, self.vote, self.query, self.other))


@dataclass
class _Pending:
    env: SignedTx
    clients: set = field(default_factory=set)


class Peer:
    def __init__(self, index: int, genesis: GenesisConfig, cosigner, net: Network, sim: Simulator,
                 behavior: Behavior = Behavior.HONEST, timeout_ms: float = 400.0, batch_ms: float = 5.0,
                 max_batch: int = 256, costs: PeerCosts | None = None,
                 slowdown: Callable[[int], float] | None = None, seed: int = 0):
        self.index = index
        self.genesis = genesis
        self.public = genesis.public
        self.n, self.f = genesis.n, genesis.f
        self.q = 2 * self.f + 1
        self.cosigner = cosigner
        self.net, self.sim = net, sim
        self.behavior = Behavior(behavior)
        self.timeout_ms, self.batch_ms, self.max_batch = timeout_ms, batch_ms, max_batch
        self.costs = costs or PeerCosts()
        self.cpu = None if self.costs.zero else Processor(sim, slowdown)
        self.rng = random.Random(seed * 1009 + index)
        self.verifier = genesis.verifier()

        self.chain: list[Block] = [genesis.block()]
        self.state = WorldState()
        self.view = 0
        self.vc_target: int | None = None
        self.vc_attempts = 0
        self.mempool: dict[bytes, _Pending] = {}
        self.accepted: dict[tuple[int, int], bytes] = {}
        self.candidates: dict[bytes, tuple[Block, WorldState]] = {}
        self.prepares: dict[tuple[int, int, bytes], set[int]] = {}
        self.commits: dict[tuple[int, int, bytes], dict[int, bytes]] = {}
        self.sent_commit: set[tuple[int, int]] = set()
        self.prepared: tuple[int, int, bytes] | None = None
        self.proposed: set[tuple[int, int]] = set()
        self.required: dict[tuple[int, int], bytes | None] = {}
        self.vc_msgs: dict[int, dict[int, ViewChange]] = {}
        self.latest_vc: dict[int, ViewChange] = {}
        self.new_view_sent: set[int] = set()
        self.future_pp: dict[int, tuple[int, PrePrepare]] = {}
        self.fetching: dict[int, float] = {}
        self._timer = None
        self._propose_ev = None
        self.rejected: list[tuple[bytes, str]] = []
        self.view_changes = 0
        self.shed = 0
        self.relayed: dict[bytes, int] = {}  # digest -> view it was relayed in
        self.on_commit: list[Callable[[Peer, Block], None]] = []
        net.register(index, self.receive)

    # -- plumbing ---------------------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    @property
    def next_height(self) -> int:
        return len(self.chain)

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    def now_ms(self) -> float:
        return self.genesis.epoch_ms + self.sim.now

    def leader(self, view: int | None = None) -> int:
        return (self.view if view is None else view) % self.n

    def is_leader(self) -> bool:
        return self.leader() == self.index and self.vc_target is None

    def peers(self) -> range:
        return range(self.n)

    def send(self, dst, msg) -> None:
        if dst == self.index:
            self.sim.schedule(0.0, self._handle, self.index, msg)
        else:
            self.net.send(self.index, dst, msg)

    def broadcast(self, msg) -> None:
        for p in self.peers():
            self.send(p, msg)

    def receive(self, src, msg) -> None:
        if self.behavior is Behavior.SILENT:
            return
        if self.cpu is not None:
            limit = self.costs.queue_limit
            if limit and self.cpu.backlog >= limit and not isinstance(src, int) and isinstance(msg, (SubmitTx, Query)):
                self.cpu.shed(self.costs.shed)
                self.shed += 1
                return
            self.cpu.submit(self.costs.of(msg), self._handle, src, msg)
        else:
            self._handle(src, msg)

    def _handle(self, src, msg) -> None:
        if self.behavior is Behavior.SILENT:
            return
        handler = getattr(self, "_on_" + type(msg).__name__, None)
        if handler is not None:
            handler(src, msg)

    # -- client requests --------------------------------------------------------

    def _on_SubmitTx(self, src, m: SubmitTx) -> None:
        env = m.env
        d = env.digest
        if d in self.state.tx_index:
            self.send(src, TxAck(d, True, Flags(True, True, "committed")))
            h = self.state.tx_index[d]
            self.send(src, CommitReply(d, h, self.chain[h].digest))
            return
        if d in self.mempool:
            self.mempool[d].clients.add(src)
            self.send(src, TxAck(d, True, Flags(True, True)))
            return
        flags = self.verifier.check(self.state, env, self.now_ms())
        ok = flags.passes(self.verifier.strict_or)
        self.send(src, TxAck(d, ok, flags))
        if not ok:
            self.rejected.append((d, flags.reason))
            return
        self.mempool[d] = _Pending(env, {src})
        self._arm_timer()
        self._maybe_propose()

    def _on_Query(self, src, m: Query) -> None:
        if m.kind == "record":
            rec = self.state.records.get(bytes(m.key))
            self.send(src, QueryReply(m.qid, rec is not None, rec))
        elif m.kind == "device":
            dev = self.state.devices.get(str(m.key))
            self.send(src, QueryReply(m.qid, dev is not None, dev))
        elif m.kind == "acl":
            dec = apply_acl(self.state, bytes(m.key), m.requester)
            self.send(src, QueryReply(m.qid, dec.reason != "not-found", dec))

    # -- proposing -------------------------------------------------------------

    def _maybe_propose(self) -> None:
        if not self.is_leader() or self._propose_ev is not None:
            return
        key = (self.view, self.next_height)
        if key in self.proposed:
            return
        if not self.mempool and self.required.get(key) is None:
            return
        self._propose_ev = self.sim.schedule(self.batch_ms, self._propose)

    def _propose(self) -> None:
        self._propose_ev = None
        if not self.is_leader():
            return
        h = self.next_height
        key = (self.view, h)
        if key in self.proposed:
            return
        need = self.required.get(key)
        if need is not None:
            if need not in self.candidates:
                return  # wait for catch-up to supply the prepared block
            block = self.candidates[need][0]
        else:
            block = self._build_block(h)
            if block is None:
                return
        self.proposed.add(key)
        if self.behavior is Behavior.EQUIVOCATE and need is None:
            self._equivocate(block)
        else:
            self.broadcast(PrePrepare(self.view, block))

    def _build_block(self, h: int) -> Block | None:
        ts = int(max(self.now_ms(), self.tip.timestamp))
        scratch = self.state.copy()
        chosen = []
        for d, p in list(self.mempool.items()):
            if len(chosen) >= self.max_batch:
                break
            flags = self.verifier.check(scratch, p.env, ts)
            if not flags.passes(self.verifier.strict_or):
                # no longer valid (stale, or superseded): drop it
                del self.mempool[d]
                self.rejected.append((d, flags.reason))
                continue
            apply_tx(scratch, p.env, h)
            chosen.append(p.env)
        if not chosen:
            return None
        return Block(h, self.tip.digest, ts, tuple(chosen))

    def _equivocate(self, block: Block) -> None:
        others = [p for p in self.peers() if p != self.index]
        self.rng.shuffle(others)
        # either split the replicas in two, or give each its own block so no variant can win
        k = 2 if self.rng.random() < 0.5 else len(others)
        variants = [Block(block.height, block.prev_hash, block.timestamp + i, block.txs) for i in range(k)]
        if self.rng.random() < 0.3 and len(block.txs) > 1:
            variants[1] = Block(block.height, block.prev_hash, block.timestamp, block.txs[:-1])
        cut = self.rng.randrange(0, len(others) + 1)
        for i, p in enumerate(others):
            v = (0 if i < cut else 1) if k == 2 else i
            self.send(p, PrePrepare(self.view, variants[v]))
        # vote for both so that whichever side can gather a quorum does
        for v in variants:
            self.candidates.setdefault(v.digest, (v, None))
            self.broadcast(Prepare(self.view, v.height, v.digest))
            sig = sign_commit(self.cosigner, self.view, v.height, v.digest, self.rng)
            self.broadcast(Commit(self.view, v.height, v.digest, sig))

    # -- three phases -------------------------------------------------------------

    def _on_PrePrepare(self, src, m: PrePrepare) -> None:
        blk = m.block
        h = blk.height
        if src != self.leader(m.view) or m.view != self.view or self.vc_target is not None:
            if m.view > self.view and src == self.leader(m.view):
                self.future_pp[h] = (src, m)
            return
        if h < self.next_height:
            return
        if h > self.next_height:
            self.future_pp[h] = (src, m)
            self._catch_up(src)
            return
        key = (m.view, h)
        d = blk.digest
        if key in self.accepted:
            if self.accepted[key] != d:
                self._start_view_change(self.view + 1)  # conflicting proposals
            return
        need = self.required.get(key)
        if need is not None and need != d:
            self._start_view_change(self.view + 1)
            return
        if self.behavior is Behavior.EQUIVOCATE and src == self.index:
            return
        try:
            new_state = validate_block(blk, self.tip, self.state, self.verifier, self.now_ms())
        except IntegrityViolation:
            self._start_view_change(self.view + 1)
            return
        self.accepted[key] = d
        self.candidates[d] = (blk, new_state)
        self.broadcast(Prepare(m.view, h, d))
        self._arm_timer()
        self._check_prepared(m.view, h, d)
        self._check_committed(m.view, h, d)

    def _on_Prepare(self, src, m: Prepare) -> None:
        if not isinstance(src, int) or not 0 <= src < self.n:
            return
        self.prepares.setdefault((m.view, m.height, m.digest), set()).add(src)
        self._check_prepared(m.view, m.height, m.digest)

    def _check_prepared(self, v: int, h: int, d: bytes) -> None:
        if v != self.view or self.vc_target is not None or h != self.next_height:
            return
        if self.accepted.get((v, h)) != d or (v, h) in self.sent_commit:
            return
        if len(self.prepares.get((v, h, d), ())) < self.q:
            return
        self.sent_commit.add((v, h))
        self.prepared = (v, h, d)
        sig = sign_commit(self.cosigner, v, h, d, self.rng)
        self.broadcast(Commit(v, h, d, sig))

    def _on_Commit(self, src, m: Commit) -> None:
        if not isinstance(src, int) or not 0 <= src < self.n:
            return
        if m.height < self.next_height:
            return
        g = self.public.group
        if not schnorr_verify(g, self.public.cosigner_publics[src], commit_message(m.view, m.height, m.digest), m.sig):
            return
        self.commits.setdefault((m.view, m.height, m.digest), {})[src] = m.sig
        if m.height > self.next_height:
            self._catch_up(src)
            return
        self._check_committed(m.view, m.height, m.digest)

    def _check_committed(self, v: int, h: int, d: bytes) -> None:
        votes = self.commits.get((v, h, d), {})
        if h != self.next_height or len(votes) < self.q:
            return
        cand = self.candidates.get(d)
        if cand is not None and cand[1] is None:
            cand = self._validated(cand[0])
        if cand is None:
            for p in sorted(votes):
                if p != self.index:
                    self._fetch(p, h)
                    break
            return
        blk, new_state = cand
        self._commit(blk.with_qc(QuorumCert.build(v, votes, self.n)), new_state)

    def _validated(self, blk: Block) -> tuple[Block, WorldState] | None:
        try:
            new_state = validate_block(blk, self.tip, self.state, self.verifier)
        except IntegrityViolation:
            return None
        self.candidates[blk.digest] = (blk, new_state)
        return blk, new_state

    def _commit(self, blk: Block, new_state: WorldState) -> None:
        self.chain.append(blk)
        self.state = new_state
        h = blk.height
        for env in blk.txs:
            p = self.mempool.pop(env.digest, None)
            self.relayed.pop(env.digest, None)
            if p is not None:
                for c in sorted(p.clients, key=str):
                    self.send(c, CommitReply(env.digest, h, blk.digest))
        if self.prepared and self.prepared[1] <= h:
            self.prepared = None
        self.vc_attempts = 0
        self._gc(h)
        for cb in self.on_commit:
            cb(self, blk)
        self._disarm_timer()
        self._arm_timer()
        pending = self.future_pp.pop(self.next_height, None)
        if pending is not None:
            self._on_PrePrepare(*pending)
        for (v, hh, d) in list(self.commits):
            if hh == self.next_height:
                self._check_committed(v, hh, d)
        self._maybe_propose()

    def _gc(self, h: int) -> None:
        self.accepted = {k: d for k, d in self.accepted.items() if k[1] > h}
        self.prepares = {k: s for k, s in self.prepares.items() if k[1] > h}
        self.commits = {k: s for k, s in self.commits.items() if k[1] > h}
        self.sent_commit = {k for k in self.sent_commit if k[1] > h}
        self.required = {k: d for k, d in self.required.items() if k[1] > h}
        self.future_pp = {k: v for k, v in self.future_pp.items() if k > h}
        self.fetching = {k: t for k, t in self.fetching.items() if k > h}
        keep = set(self.accepted.values())
        if self.prepared:
            keep.add(self.prepared[2])
        keep.update(d for d in self.required.values() if d)
        self.candidates = {d: c for d, c in self.candidates.items() if d in keep or c[0].height > h}

    # -- catch-up ------------------------------------------------------------------

    def _catch_up(self, src) -> None:
        self._fetch(src, self.next_height)

    def _fetch(self, src, h: int) -> None:
        last = self.fetching.get(h)
        if last is not None and self.sim.now - last < self.timeout_ms / 2:
            return
        self.fetching[h] = self.sim.now
        self.send(src, Fetch(h))

    def _on_Fetch(self, src, m: Fetch) -> None:
        if 0 < m.height < len(self.chain):
            self.send(src, BlockReply(self.chain[m.height], self.height))

    def _on_BlockReply(self, src, m: BlockReply) -> None:
        blk = m.block
        if blk.height != self.next_height:
            if blk.height > self.next_height:
                self._fetch(src, self.next_height)
            return
        if not blk.qc.verify(self.public, self.f, blk.height, blk.digest):
            return
        try:
            new_state = validate_block(blk, self.tip, self.state, self.verifier)
        except IntegrityViolation:
            return
        self.fetching.pop(blk.height, None)
        self._commit(blk, new_state)
        if m.tip > self.height:
            self._fetch(src, self.next_height)

    # -- view change ---------------------------------------------------------------

    def _has_work(self) -> bool:
        return bool(self.mempool) or any(k[1] == self.next_height for k in self.accepted)

    def _arm_timer(self) -> None:
        if self._timer is not None or not (self._has_work() or self.vc_target is not None):
            return
        delay = self.timeout_ms * (2 ** min(self.vc_attempts, 6))
        self._timer = self.sim.schedule(delay, self._on_timeout, self.height)

    def _disarm_timer(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _on_timeout(self, height_at_arm: int) -> None:
        self._timer = None
        if self.height > height_at_arm:
            self._arm_timer()
            return
        if self.vc_target is None and not self.is_leader() and self._relay():
            self._arm_timer()
            return
        current = self.vc_target if self.vc_target is not None else self.view
        self._start_view_change(current + 1)

    def _relay(self) -> bool:
        """Hand requests the leader may never have seen to it, once per view."""
        now = self.now_ms()
        for d, p in list(self.mempool.items()):
            if not self.verifier.check(self.state, p.env, now).passes(self.verifier.strict_or):
                del self.mempool[d]
                self.relayed.pop(d, None)
        fresh = [d for d in self.mempool if self.relayed.get(d) != self.view]
        for d in fresh:
            self.relayed[d] = self.view
            self.send(self.leader(), SubmitTx(self.mempool[d].env, 0))
        return bool(fresh)

    def _start_view_change(self, nv: int) -> None:
        if nv <= self.view or (self.vc_target is not None and nv <= self.vc_target):
            return
        self.vc_target = nv
        self.vc_attempts += 1
        self.view_changes += 1
        if self._propose_ev is not None:
            self._propose_ev.cancel()
            self._propose_ev = None
        pv, blk = -1, None
        if self.prepared and self.prepared[1] == self.next_height:
            pv = self.prepared[0]
            blk = self.candidates[self.prepared[2]][0]
        self.broadcast(ViewChange(nv, self.next_height, pv, blk))
        self._disarm_timer()
        self._arm_timer()

    def _on_ViewChange(self, src, m: ViewChange) -> None:
        if not isinstance(src, int) or m.new_view <= self.view:
            return
        self.vc_msgs.setdefault(m.new_view, {})[src] = m
        prev = self.latest_vc.get(src)
        if prev is None or m.new_view > prev.new_view:
            self.latest_vc[src] = m
        if m.height > self.next_height:
            self._catch_up(src)
        # join once f+1 peers want a higher view than ours
        floor = self.vc_target if self.vc_target is not None else self.view
        ahead = sorted(v.new_view for v in self.latest_vc.values() if v.new_view > floor)
        if len(ahead) >= self.f + 1:
            self._start_view_change(ahead[-(self.f + 1)])
        nv = m.new_view
        msgs = self.vc_msgs.get(nv, {})
        if self.leader(nv) == self.index and len(msgs) >= self.q and nv not in self.new_view_sent \
                and self.vc_target == nv:
            self.new_view_sent.add(nv)
            proofs = tuple(sorted(msgs.items())[: self.q])
            need = self._required_from(proofs, self.next_height)
            pp = None
            if need is not None:
                pp = PrePrepare(nv, need)
                self.proposed.add((nv, need.height))
            self.broadcast(NewView(nv, proofs, pp))

    @staticmethod
    def _required_from(proofs, height: int) -> Block | None:
        best_v, best = -1, None
        for _, vc in proofs:
            if vc.prepared is not None and vc.height == height and vc.prepared_view > best_v:
                best_v, best = vc.prepared_view, vc.prepared
        return best

    def _on_NewView(self, src, m: NewView) -> None:
        if src != self.leader(m.view) or m.view < self.view:
            return
        if m.view == self.view and self.vc_target is None:
            return
        senders = {p for p, vc in m.proofs}
        if len(senders) < self.q or any(vc.new_view != m.view for _, vc in m.proofs):
            return
        need = self._required_from(m.proofs, self.next_height)
        if need is not None and (m.preprepare is None or m.preprepare.block.digest != need.digest):
            return
        self.view = m.view
        self.vc_target = None
        self.vc_msgs = {v: d for v, d in self.vc_msgs.items() if v > m.view}
        self.latest_vc = {p: vc for p, vc in self.latest_vc.items() if vc.new_view > m.view}
        for _, vc in m.proofs:
            if vc.prepared is not None:
                self.candidates.setdefault(vc.prepared.digest, (vc.prepared, None))
        self.required[(m.view, self.next_height)] = need.digest if need is not None else None
        self._disarm_timer()
        self._arm_timer()
        if m.preprepare is not None:
            self._on_PrePrepare(src, m.preprepare)
        pending = self.future_pp.pop(self.next_height, None)
        if pending is not None and pending[1].view == self.view:
            self._on_PrePrepare(*pending)
        self._maybe_propose()
