"""Per-cut-cycle measurements and their aggregation by break duration.

A cycle is one Bad interval plus the Good interval after it.  Emissions and
deliveries are attributed to the cycle whose ``[bad_start, next_bad)`` span
contains them; anything before the first cut lands in a warm-up bucket that
never reaches the aggregates.

Energy follows the bit-count convention: every emission costs
``8 * total_bytes`` bits, and bits spent on lost emissions are wasted.
Throughput is a proxy, delivered payload bits per second of Good time in the
cycle.
"""

import csv
import logging
import math
from bisect import bisect_right
from dataclasses import dataclass

from .link import FrameKind

log = logging.getLogger(__name__)

BIN_WIDTH = 10.0
BIN_LOW = 20.0
BIN_HIGH = 100.0

CYCLE_HEADER = ["policy", "rep", "cycle", "break_s", "bin", "latency_s", "lost_frames",
                "lost_bits", "delivered_bytes", "ratio_pct"]
AGGREGATE_HEADER = ["policy", "bin", "n", "mean_latency_s", "mean_lost_bits",
                    "mean_ratio_pct", "mean_throughput_bps"]
METRICS = ("latency_s", "lost_bits", "ratio_pct", "throughput_bps")
# Lower is better for all but throughput.
HIGHER_IS_BETTER = {"throughput_bps"}


class ConsistencyError(RuntimeError):
    pass


@dataclass
class CycleRecord:
    rep: int
    cycle_index: int
    break_duration: float
    bin: str
    latency: float
    lost_frames: int
    lost_bits: int
    delivered_payload_bytes: int
    ratio_pct: float
    good_time: float = 0.0
    bad_start: float = 0.0
    good_start: float = 0.0
    policy: str = ""

    @property
    def throughput_bps(self):
        if self.good_time <= 0:
            return math.nan
        return self.delivered_payload_bytes * 8 / self.good_time


@dataclass
class AggregateRow:
    bin: str
    n: int
    mean_latency: float
    mean_lost_bits: float
    mean_ratio_pct: float
    mean_throughput: float
    policy: str = ""

    def metric(self, name):
        return {"latency_s": self.mean_latency, "lost_bits": self.mean_lost_bits,
                "ratio_pct": self.mean_ratio_pct,
                "throughput_bps": self.mean_throughput}[name]


def bin_bounds(duration, width=BIN_WIDTH, high=BIN_HIGH):
    k = math.floor(duration / width)
    if duration == high and k * width == high:
        k -= 1
    return k * width, (k + 1) * width


def bin_label(duration, width=BIN_WIDTH, high=BIN_HIGH):
    lo, hi = bin_bounds(duration, width, high)
    return f"{lo:g}-{hi:g}"


def bin_sort_key(label):
    return float(label.split("-")[0])


def close_cycle(rep, cycle_index, bad_start, good_start, next_bad_or_end,
                first_data_emission_after_good, lost_frames=0, lost_bits=0,
                delivered_payload_bytes=0, data_pending=True, bin_width=BIN_WIDTH):
    if not good_start > bad_start or next_bad_or_end < good_start:
        raise ConsistencyError(
            f"bad cycle bounds {bad_start}, {good_start}, {next_bad_or_end}")
    brk = good_start - bad_start
    latency = None
    if data_pending and first_data_emission_after_good is not None:
        latency = first_data_emission_after_good - good_start
    if delivered_payload_bytes > 0:
        ratio = 100.0 * (lost_bits / 8) / delivered_payload_bytes
    else:
        ratio = None
    return CycleRecord(rep, cycle_index, brk, bin_label(brk, bin_width), latency,
                       lost_frames, lost_bits, delivered_payload_bytes, ratio,
                       next_bad_or_end - good_start, bad_start, good_start)


class MetricsRecorder:
    """Collects emissions and deliveries for one run, keyed to cut cycles."""

    def __init__(self, schedule, data_source):
        self.schedule = schedule
        self.data_source = data_source
        self.cycle_bounds = schedule.cycles()
        self._starts = [c[0] for c in self.cycle_bounds]
        n = len(self.cycle_bounds) + 1  # slot 0 is warm-up (and trailing partial cut)
        self.lost_frames = [0] * n
        self.lost_bits = [0] * n
        self.delivered = [0] * n
        self.pending_at_good = {}
        self.data_ok_times = []
        self.total_bits = 0
        self.total_lost_bits = 0
        self.total_ok_bits = 0
        self.total_delivered = 0

    def _slot(self, t):
        i = bisect_right(self._starts, t)
        if i and t >= self.cycle_bounds[i - 1][2]:
            return 0
        return i

    def record_emission(self, frame, delivered, t):
        bits = frame.total_bytes * 8
        self.total_bits += bits
        if delivered:
            self.total_ok_bits += bits
            if frame.kind is FrameKind.DATA and frame.src == self.data_source:
                self.data_ok_times.append(t)
        else:
            self.total_lost_bits += bits
            i = self._slot(t)
            self.lost_frames[i] += 1
            self.lost_bits[i] += bits

    def record_delivery(self, payload_bytes, t=None):
        if t is None:
            raise ValueError("delivery time required")
        self.total_delivered += payload_bytes
        self.delivered[self._slot(t)] += payload_bytes

    def note_pending(self, good_start, pending):
        self.pending_at_good[good_start] = pending

    def first_data_after(self, t):
        times = self.data_ok_times
        i = bisect_right(times, t - 1e-12)
        return times[i] if i < len(times) else None

    def records(self, rep=0, policy=""):
        out = []
        for k, (bad, good, end) in enumerate(self.cycle_bounds):
            rec = close_cycle(
                rep, k, bad, good, end, self.first_data_after(good),
                self.lost_frames[k + 1], self.lost_bits[k + 1], self.delivered[k + 1],
                self.pending_at_good.get(good, True))
            rec.policy = policy
            out.append(rec)
        return out

    def warmup(self):
        return {"lost_frames": self.lost_frames[0], "lost_bits": self.lost_bits[0],
                "delivered_bytes": self.delivered[0]}


def _mean(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return sum(values) / len(values) if values else math.nan


def aggregate(records, bin_width=BIN_WIDTH):
    groups = {}
    for r in records:
        label = bin_label(r.break_duration, bin_width)
        groups.setdefault(label, []).append(r)
    rows = []
    for label in sorted(groups, key=bin_sort_key):
        rs = groups[label]
        rows.append(AggregateRow(
            label, len(rs),
            _mean(r.latency for r in rs),
            _mean(r.lost_bits for r in rs),
            _mean(r.ratio_pct for r in rs),
            _mean(r.throughput_bps for r in rs),
            rs[0].policy))
    return rows


def gain_factor(traditional, persistent, higher_is_better=False):
    """Improvement of persistent over traditional; > 1 favors persistent."""
    num, den = (persistent, traditional) if higher_is_better else (traditional, persistent)
    if math.isnan(num) or math.isnan(den):
        return math.nan
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


def gain_report(traditional, persistent):
    """Per-bin comparison over the bins both aggregates populate."""
    trad = {r.bin: r for r in traditional}
    pers = {r.bin: r for r in persistent}
    common = sorted(set(trad) & set(pers), key=bin_sort_key)
    if set(trad) != set(pers):
        log.warning("bin sets differ; comparing only %s", ", ".join(common))
    rows = []
    for b in common:
        row = {"bin": b, "n_traditional": trad[b].n, "n_persistent": pers[b].n}
        for m in METRICS:
            tv, pv = trad[b].metric(m), pers[b].metric(m)
            row[f"{m}_traditional"] = tv
            row[f"{m}_persistent"] = pv
            row[f"{m}_gain_factor"] = gain_factor(tv, pv, m in HIGHER_IS_BETTER)
            row[f"{m}_abs_gain"] = (pv - tv) if m in HIGHER_IS_BETTER else (tv - pv)
        rows.append(row)
    return rows


def comparison_header():
    cols = ["bin", "n_traditional", "n_persistent"]
    for m in METRICS:
        cols += [f"{m}_traditional", f"{m}_persistent", f"{m}_gain_factor", f"{m}_abs_gain"]
    return cols


# -- CSV ----------------------------------------------------------------

def fmt(x, digits=6):
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{digits}f}"


def parse_float(s):
    if s == "":
        return None
    return float(s)


def write_cycles(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CYCLE_HEADER)
        for r in records:
            w.writerow([r.policy, r.rep, r.cycle_index, fmt(r.break_duration, 3), r.bin,
                        fmt(r.latency), r.lost_frames, r.lost_bits,
                        r.delivered_payload_bytes, fmt(r.ratio_pct)])


def write_aggregate(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for r in rows:
            w.writerow([r.policy, r.bin, r.n, fmt(r.mean_latency), fmt(r.mean_lost_bits, 3),
                        fmt(r.mean_ratio_pct), fmt(r.mean_throughput, 3)])


def read_aggregate(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(AggregateRow(
                rec["bin"], int(rec["n"]), float(rec["mean_latency_s"]),
                float(rec["mean_lost_bits"]), float(rec["mean_ratio_pct"]),
                float(rec["mean_throughput_bps"]), rec.get("policy", "")))
    return rows


def write_comparison(path, rows):
    header = comparison_header()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[c]) if isinstance(row[c], float) else row[c] for c in header])
