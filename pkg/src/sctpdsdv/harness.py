"""Scenario configuration, single runs and replication campaigns."""

import dataclasses
import hashlib
import os
import random
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .channel import EnvSubsystem, build_cut_schedule, integer_range
from .dsdv import DsdvParams, DsdvRouter, converged_entries
from .errors import ConfigError
from .kernel import PRIO_APP, PRIO_PROBE, Kernel
from .link import FrameSizes, Link
from .metrics import (MetricsRecorder, aggregate, gain_report, write_aggregate,
                      write_comparison, write_cycles)
from .policy import PolicyMode, bind
from .sctp import Association, SctpParams

CYCLES_CSV = "cycles.csv"
AGGREGATE_CSV = "aggregate.csv"
COMPARISON_CSV = "comparison.csv"


@dataclass
class RacmConfig:
    start: float = 200.0
    d_min: float = 20.0
    d_max: float = 100.0


@dataclass
class DsdvConfig:
    periodic: float = 15.0
    settling: float = 6.0
    neighbor_timeout: float = 45.0
    warm_start: bool = True


@dataclass
class SctpConfig:
    rto_initial: float = 3.0
    rto_min: float = 1.0
    rto_max: float = 60.0
    max_retrans: int = 10
    window: int = 4
    heartbeat: float = 30.0
    backoff_multiplier: float = 2.0


@dataclass
class LinkConfig:
    data_overhead: int = 48
    sack_bytes: int = 64
    heartbeat_bytes: int = 56
    shutdown_bytes: int = 40
    dsdv_header: int = 20
    dsdv_entry: int = 12


@dataclass
class ScenarioConfig:
    topology: str = "pair"
    sim_end: float = 2000.0
    cbr_interval: float = 0.1
    segment_bytes: int = 1500
    reps: int = 20
    base_seed: int = 1
    bandwidth_bps: float = 2_000_000.0
    detect_latency: float = 0.0
    shutdown_at: float = None
    racm: RacmConfig = field(default_factory=RacmConfig)
    dsdv: DsdvConfig = field(default_factory=DsdvConfig)
    sctp: SctpConfig = field(default_factory=SctpConfig)
    link: LinkConfig = field(default_factory=LinkConfig)

    def replace(self, **changes):
        """Copy with changes; dotted keys use ``__`` (``racm__d_min=30``)."""
        cfg = dataclasses.replace(self, racm=dataclasses.replace(self.racm),
                                  dsdv=dataclasses.replace(self.dsdv),
                                  sctp=dataclasses.replace(self.sctp),
                                  link=dataclasses.replace(self.link))
        for key, value in changes.items():
            target, name = cfg, key
            if "__" in key:
                section, name = key.split("__", 1)
                target = getattr(cfg, section)
            if not hasattr(target, name):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(target, name, value)
        validate(cfg)
        return cfg

    def dsdv_params(self):
        d = self.dsdv
        return DsdvParams(d.periodic, d.settling, d.neighbor_timeout)

    def sctp_params(self):
        s = self.sctp
        return SctpParams(s.rto_initial, s.rto_min, s.rto_max, s.max_retrans, s.window,
                          s.heartbeat, s.backoff_multiplier, self.segment_bytes)

    def frame_sizes(self):
        k = self.link
        return FrameSizes(k.data_overhead, k.sack_bytes, k.heartbeat_bytes,
                          k.shutdown_bytes, k.dsdv_header, k.dsdv_entry)


_SECTIONS = ("racm", "dsdv", "sctp", "link")


def _config_keys():
    keys = {}
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in _SECTIONS:
            for g in dataclasses.fields(f.type):
                keys[f"{f.name}.{g.name}"] = (f.name, g.name, g.type)
        else:
            keys[f.name] = (None, f.name, f.type)
    return keys


CONFIG_KEYS = _config_keys()

_TOPOLOGY = re.compile(r"^(pair|chain\((\d+)\)|ring\((\d+)\))$")


def _convert(raw, typ, key):
    text = raw.strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if typ is int:
        return int(text)
    if typ is str:
        return text
    if key == "shutdown_at" and text.lower() in ("none", ""):
        return None
    return float(text)


def validate(cfg, lines=None):
    """Raise ConfigError naming the offending key (and line, when known)."""
    lines = lines or {}

    def fail(key, msg):
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{msg}")

    if not _TOPOLOGY.match(cfg.topology.replace(" ", "")):
        fail("topology", f"bad topology {cfg.topology!r} (pair, chain(n) or ring(n))")
    n = topology_size(cfg.topology)
    if n < 2 or (cfg.topology.startswith("ring") and n < 3):
        fail("topology", f"topology {cfg.topology!r} is too small")
    positive = {
        "sim_end": cfg.sim_end, "cbr_interval": cfg.cbr_interval,
        "segment_bytes": cfg.segment_bytes, "bandwidth_bps": cfg.bandwidth_bps,
        "racm.d_min": cfg.racm.d_min, "racm.d_max": cfg.racm.d_max,
        "dsdv.periodic": cfg.dsdv.periodic, "dsdv.settling": cfg.dsdv.settling,
        "dsdv.neighbor_timeout": cfg.dsdv.neighbor_timeout,
        "sctp.rto_initial": cfg.sctp.rto_initial, "sctp.rto_min": cfg.sctp.rto_min,
        "sctp.rto_max": cfg.sctp.rto_max, "sctp.heartbeat": cfg.sctp.heartbeat,
        "sctp.window": cfg.sctp.window, "reps": cfg.reps,
    }
    for key, value in positive.items():
        if not value > 0:
            fail(key, f"{key} must be positive, got {value}")
    if cfg.racm.start < 0:
        fail("racm.start", "racm.start must be non-negative")
    if cfg.detect_latency < 0:
        fail("detect_latency", "detect_latency must be non-negative")
    if cfg.sctp.max_retrans < 0:
        fail("sctp.max_retrans", "sctp.max_retrans must be non-negative")
    if cfg.sctp.backoff_multiplier < 1:
        fail("sctp.backoff_multiplier", "sctp.backoff_multiplier must be >= 1")
    if cfg.racm.d_min > cfg.racm.d_max:
        key = "racm.d_min" if "racm.d_min" in lines else "racm.d_max"
        fail(key, f"racm.d_min ({cfg.racm.d_min}) > racm.d_max ({cfg.racm.d_max})")
    try:
        integer_range(cfg.racm.d_min, cfg.racm.d_max)
    except ConfigError as exc:
        fail("racm.d_min", str(exc))
    if not cfg.sctp.rto_min <= cfg.sctp.rto_initial <= cfg.sctp.rto_max:
        fail("sctp.rto_initial", "need rto_min <= rto_initial <= rto_max")


def parse_config(text):
    """Parse flat ``key = value`` lines (``#`` comments, dotted section keys)."""
    cfg = ScenarioConfig()
    lines = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        section, name, typ = CONFIG_KEYS[key]
        try:
            value = _convert(raw, typ, key)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        setattr(getattr(cfg, section) if section else cfg, name, value)
        lines[key] = lineno
    if "topology" in lines:
        cfg.topology = cfg.topology.replace(" ", "")
    validate(cfg, lines)
    return cfg


def load_config(path):
    if path is None or str(path).lower() == "none":
        return ScenarioConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- topology ------------------------------------------------------------

def topology_size(topology):
    m = _TOPOLOGY.match(topology.replace(" ", ""))
    if not m:
        raise ConfigError(f"bad topology {topology!r}")
    if m.group(1) == "pair":
        return 2
    return int(m.group(2) or m.group(3))


def topology_adjacency(topology):
    n = topology_size(topology)
    adj = {i: [] for i in range(n)}
    for i in range(n - 1):
        adj[i].append(i + 1)
        adj[i + 1].append(i)
    if topology.startswith("ring"):
        adj[0].append(n - 1)
        adj[n - 1].append(0)
    return {i: tuple(sorted(v)) for i, v in adj.items()}


def topology_endpoints(topology):
    n = topology_size(topology)
    if topology.startswith("ring"):
        return 0, n // 2
    return 0, n - 1


# -- runs ----------------------------------------------------------------

def derive_seed(base_seed, rep, stream="run"):
    digest = hashlib.sha256(f"{base_seed}:{rep}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class Node:
    node_id: int
    router: DsdvRouter
    assoc: Association = None


@dataclass
class RunResult:
    rep: int
    policy: PolicyMode
    cycles: list
    totals: dict
    seed_used: int
    schedule_digest: str


class Simulation:
    """One fully wired scenario instance: kernel, channel, link, nodes, metrics."""

    def __init__(self, config, mode, rep=0, schedule=None, traffic=True, trace=False,
                 log_emissions=False):
        self.config = cfg = config
        self.mode = mode = PolicyMode.parse(mode) if isinstance(mode, str) else mode
        self.rep = rep
        self.seed = derive_seed(cfg.base_seed, rep)
        self.kernel = kernel = Kernel()
        if schedule is None:
            rng = random.Random(derive_seed(cfg.base_seed, rep, "channel"))
            schedule = build_cut_schedule(rng, cfg.racm.start, cfg.racm.d_min,
                                          cfg.racm.d_max, cfg.sim_end)
        self.schedule = schedule
        self.env = EnvSubsystem(kernel, schedule, cfg.detect_latency)
        self.adjacency = topology_adjacency(cfg.topology)
        self.source, self.sink = topology_endpoints(cfg.topology)
        self.recorder = MetricsRecorder(schedule, self.source)
        self.link = Link(kernel, schedule, self.adjacency, cfg.bandwidth_bps,
                         self.recorder, log=log_emissions)
        sizes = cfg.frame_sizes()
        dparams = cfg.dsdv_params()
        self.nodes = [Node(n, DsdvRouter(kernel, n, self.link, dparams, sizes))
                      for n in sorted(self.adjacency)]
        if cfg.dsdv.warm_start:
            tables = converged_entries(self.adjacency)
            for node in self.nodes:
                node.router.install(tables[node.node_id])
        for node in self.nodes:
            node.router.start()

        self.sender = self.receiver = None
        if traffic:
            sparams = cfg.sctp_params()
            rec = self.recorder

            def delivered(nbytes):
                rec.record_delivery(nbytes, kernel._now)

            src, dst = self.nodes[self.source], self.nodes[self.sink]
            src.assoc = self.sender = Association(kernel, src.router, self.sink, sparams,
                                                  sizes, trace=trace)
            dst.assoc = self.receiver = Association(kernel, dst.router, self.source,
                                                    sparams, sizes, on_deliver=delivered,
                                                    trace=trace)
        bind(mode, self.env, self.nodes)
        self.env.publish_transitions()
        if traffic:
            for _, good, _ in schedule.cycles():
                kernel.schedule(good, PRIO_PROBE, self._probe, good)
            self.sender.start()
            self.receiver.start()
            self._cbr_stopped = False
            kernel.schedule(0.0, PRIO_APP, self._cbr, 0)
            if cfg.shutdown_at is not None:
                kernel.schedule(cfg.shutdown_at, PRIO_APP, self._shutdown)

    @property
    def routers(self):
        return [n.router for n in self.nodes]

    def _probe(self, good_start):
        self.recorder.note_pending(good_start, self.sender.has_pending())

    def _cbr(self, k):
        if self._cbr_stopped:
            return
        self.sender.submit_payload(self.config.segment_bytes)
        nxt = (k + 1) * self.config.cbr_interval
        if nxt < self.config.sim_end:
            self.kernel.schedule(nxt, PRIO_APP, self._cbr, k + 1)

    def _shutdown(self):
        self._cbr_stopped = True
        self.sender.shutdown()

    def run(self, until=None):
        return self.kernel.run(self.config.sim_end if until is None else until)

    def totals(self):
        rec = self.recorder
        t = {
            "emitted_bits": rec.total_bits,
            "lost_bits": rec.total_lost_bits,
            "ok_bits": rec.total_ok_bits,
            "delivered_bytes": rec.total_delivered,
            "dsdv_updates": sum(len(r.updates_sent) for r in self.routers),
            "events": self.kernel.fired,
        }
        if self.sender is not None:
            s = self.sender
            t.update(submitted_bytes=s.submitted_bytes, data_sent=s.data_sent,
                     retransmissions=s.retransmissions,
                     fast_retransmissions=s.fast_retransmissions,
                     heartbeats=s.heartbeats_sent + self.receiver.heartbeats_sent)
        return t

    def result(self):
        return RunResult(self.rep, self.mode, self.recorder.records(self.rep, self.mode.value),
                         self.totals(), self.seed, self.schedule.digest())


def run_scenario(config, mode, rep=0):
    sim = Simulation(config, mode, rep)
    sim.run()
    return sim.result()


def _run_job(job):
    config, mode, rep = job
    return run_scenario(config, mode, rep)


@dataclass
class CampaignResult:
    results: list
    aggregates: dict
    comparison: list
    paths: dict


def _check_writable(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=out, prefix=".probe")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_campaign(config, out_dir, policies=(PolicyMode.TRADITIONAL, PolicyMode.PERSISTENT),
                 workers=1, figures=False):
    """Run every (policy, rep) pair and write cycles/aggregate(/comparison) CSVs."""
    out = _check_writable(out_dir)
    policies = [PolicyMode.parse(p) if isinstance(p, str) else p for p in policies]
    jobs = [(config, mode, rep) for mode in policies for rep in range(config.reps)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]

    digests = {}
    for r in results:
        digests.setdefault(r.rep, set()).add(r.schedule_digest)
    assert all(len(d) == 1 for d in digests.values()), "policies saw different channels"

    records = [c for r in results for c in r.cycles]
    aggregates = {}
    for mode in policies:
        aggregates[mode] = aggregate([c for r in results if r.policy is mode for c in r.cycles])
    paths = {"cycles": out / CYCLES_CSV, "aggregate": out / AGGREGATE_CSV}
    write_cycles(paths["cycles"], records)
    write_aggregate(paths["aggregate"], [row for m in policies for row in aggregates[m]])
    comparison = []
    if PolicyMode.TRADITIONAL in aggregates and PolicyMode.PERSISTENT in aggregates:
        comparison = gain_report(aggregates[PolicyMode.TRADITIONAL],
                                 aggregates[PolicyMode.PERSISTENT])
        paths["comparison"] = out / COMPARISON_CSV
        write_comparison(paths["comparison"], comparison)
    if figures:
        from .report import render_figures
        paths.update(render_figures(aggregates, out))
    return CampaignResult(results, aggregates, comparison, paths)
