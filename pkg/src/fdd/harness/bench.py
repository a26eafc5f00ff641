"""READ/WRITE load benchmark over the simulated 4-peer consortium and DHT.

All timing is simulated.  Peers run on a single simulated CPU each, with
per-message service costs; once a peer's backlog passes ``knee`` jobs every
new job is slowed in proportion (cache and scheduler thrash), which is what
makes throughput fall again past saturation.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field, replace

from ..certless import encrypt_pointer
from ..dht import DHT, DHTError
from ..ledger import Consortium, PeerCosts
from ..sim import NetworkModel

OPS = ("READ", "WRITE")


@dataclass(frozen=True)
class Thrash:
    knee: int = 24
    per_job: float = 0.02

    def __call__(self, backlog: int) -> float:
        return 1.0 + self.per_job * max(0, backlog - self.knee)


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 7
    peers: int = 4
    f: int = 1
    duration_s: float = 3.0
    devices: int = 8
    preload: int = 64
    payload_bytes: int = 256
    storage_nodes: int = 5
    replication: int = 3
    read_timeout_ms: float = 2_000.0
    commit_timeout_ms: float = 10_000.0
    ack_timeout_ms: float = 500.0
    resend_ms: float = 1_000.0
    view_timeout_ms: float = 3_000.0
    max_outstanding: int = 20_000
    dht_ms: float = 1.5
    base_ms: float = 2.0
    jitter_ms: float = 1.0
    loss: float = 0.0
    costs: PeerCosts = field(default_factory=lambda: PeerCosts(
        submit=2.5, preprepare_base=1.0, preprepare_per_tx=1.5, vote=0.4, query=8.0, other=0.4,
        shed=0.1, queue_limit=64))
    thrash: Thrash = field(default_factory=Thrash)


@dataclass(frozen=True)
class BenchRow:
    op: str
    workload: int
    generated: int
    refused: int
    submitted: int
    succeeded: int
    failed: int
    tp: float
    sr: float
    delay_s: float
    p50_s: float
    p95_s: float
    p99_s: float
    utilisation: tuple[float, ...] = ()

    @property
    def flag(self) -> str:
        return "generator-saturated" if self.refused else ""


@dataclass
class BenchmarkReport:
    rows: list[BenchRow] = field(default_factory=list)

    def for_op(self, op: str) -> list[BenchRow]:
        return [r for r in self.rows if r.op == op]

    def saturation(self, op: str) -> int | None:
        """Workload of peak throughput (first one on ties)."""
        rows = self.for_op(op)
        if not rows:
            return None
        best = max(r.tp for r in rows)
        return next(r.workload for r in rows if r.tp == best)


def parse_workloads(text: str) -> list[int]:
    """``100..1000:100`` or ``100,200,500`` (or a mix joined by commas)."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if ".." in part:
            span, _, step = part.partition(":")
            lo, _, hi = span.partition("..")
            lo, hi, step = int(lo), int(hi), int(step or 1)
            if step <= 0 or hi < lo:
                raise ValueError(f"bad workload range {part!r}")
            out.extend(range(lo, hi + 1, step))
        else:
            out.append(int(part))
    if any(w < 0 for w in out):
        raise ValueError("workloads must be non-negative")
    return out


def _quantile(xs: list[float], q: float) -> float:
    if not xs:
        return 0.0
    s = sorted(xs)
    return s[min(len(s) - 1, int(q * len(s)))]


class _Bed:
    """One fresh consortium + DHT with registered devices and preloaded records."""

    def __init__(self, cfg: BenchConfig, workload: int):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed * 7919 + workload)
        self.c = Consortium(cfg.peers, cfg.f, seed=cfg.seed, model=NetworkModel(cfg.base_ms, cfg.jitter_ms, cfg.loss),
                            timeout_ms=cfg.view_timeout_ms, costs=cfg.costs, slowdown=cfg.thrash,
                            client_kwargs={"commit_timeout_ms": cfg.commit_timeout_ms,
                                           "ack_timeout_ms": cfg.ack_timeout_ms, "resend_ms": cfg.resend_ms})
        self.dht = DHT.with_nodes(cfg.storage_nodes, cfg.replication)
        self.devices = [self.c.register(f"dev-{i:02d}")[0] for i in range(cfg.devices)]
        self.records: list[bytes] = []
        pending = [self.store() for _ in range(cfg.preload)]
        self.c.wait([r for r, _ in pending])
        self.records = [a for r, a in pending if r.status == "committed"]
        self.c.settle(500)

    def store(self, callback=None):
        keys = self.rng.choice(self.devices)
        ads = self.dht.put(self.rng.randbytes(self.cfg.payload_bytes))
        ptr = encrypt_pointer(self.c.public, keys.pk, keys.id, self.rng)
        env = self.c.data_tx(keys, "store", ads, pointer=ptr)
        rec = self.c.submit(env, callback)
        return rec, ads


def _run_one(cfg: BenchConfig, op: str, workload: int) -> BenchRow:
    generated = int(round(workload * cfg.duration_s))
    if generated == 0:
        return BenchRow(op, workload, 0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    bed = _Bed(cfg, workload)
    c, sim = bed.c, bed.c.sim
    t0 = sim.now
    gap = 1000.0 / workload
    lat: list[float] = []
    done_at: list[float] = []
    state = {"outstanding": 0, "refused": 0, "submitted": 0, "failed": 0, "next_peer": 0}

    def finish(ok: bool, started: float) -> None:
        state["outstanding"] -= 1
        if ok:
            lat.append(sim.now - started)
            done_at.append(sim.now)
        else:
            state["failed"] += 1

    def write() -> None:
        ads = []

        def confirmed(rec):
            bed.dht.mark_stored(rec, ads[0])
            finish(rec.status == "committed", rec.submitted_at)

        ads.append(bed.store(confirmed)[1])

    def read() -> None:
        started = sim.now
        ads = bed.rng.choice(bed.records)
        peer = state["next_peer"]
        state["next_peer"] = (peer + 1) % cfg.peers
        settled = []

        def reply(rep, _t):
            if settled:
                return
            settled.append(True)
            if not rep.found:
                finish(False, started)
                return
            sim.schedule(cfg.dht_ms, fetch)

        def fetch():
            try:
                bed.dht.get(ads)
                finish(True, started)
            except DHTError:
                finish(False, started)

        def expire():
            if not settled:
                settled.append(False)
                c.client.forget_query(qid)
                finish(False, started)

        qid = c.client.query(peer, "record", ads, reply)
        sim.schedule(cfg.read_timeout_ms, expire)

    issue = write if op == "WRITE" else read

    def tick() -> None:
        if state["outstanding"] >= cfg.max_outstanding:
            state["refused"] += 1
            return
        state["outstanding"] += 1
        state["submitted"] += 1
        issue()

    for i in range(generated):
        sim.at(t0 + i * gap, tick)
    horizon = t0 + cfg.duration_s * 1000.0 + (cfg.commit_timeout_ms if op == "WRITE" else cfg.read_timeout_ms) + 1000.0
    while (state["outstanding"] > 0 or state["submitted"] + state["refused"] < generated) and sim.now < horizon:
        if not sim.step():
            break
    span_ms = (max(done_at) - t0) if done_at else 0.0
    succeeded = len(lat)
    util = tuple(round(p.cpu.utilisation(sim.now - t0), 6) if p.cpu else 0.0 for p in c.peers)
    return BenchRow(
        op, workload, generated, state["refused"], state["submitted"], succeeded,
        state["submitted"] - succeeded,
        succeeded / (span_ms / 1000.0) if span_ms > 0 else 0.0,
        succeeded / generated,
        statistics.fmean(lat) / 1000.0 if lat else 0.0,
        _quantile(lat, 0.50) / 1000.0, _quantile(lat, 0.95) / 1000.0, _quantile(lat, 0.99) / 1000.0,
        util,
    )


def run_benchmark(op: str, workloads, duration: float | None = None, config: BenchConfig | None = None,
                  report: BenchmarkReport | None = None) -> BenchmarkReport:
    """One fresh testbed per workload so rows do not leak backlog into each other."""
    op = op.upper()
    if op not in OPS:
        raise ValueError(f"op must be one of {OPS}")
    cfg = config or BenchConfig()
    if duration is not None:
        cfg = replace(cfg, duration_s=float(duration))
    report = report if report is not None else BenchmarkReport()
    for wl in (parse_workloads(workloads) if isinstance(workloads, str) else workloads):
        report.rows.append(_run_one(cfg, op, int(wl)))
    return report
