"""Network bandwidth traces: loading, synthesis, filtering, splitting, queries.

Traces are immutable after construction and safe to share across workers.
Bandwidth queries use zero-order hold (step function); looping a trace past its
duration is the session driver's job, never done here.
"""

from __future__ import annotations

import bisect
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    EmptyCorpus,
    InvalidSpec,
    OutOfRange,
    ParseError,
    ValidationError,
)

MAHIMAHI_PACKET_BYTES = 1500
MAHIMAHI_BUCKET_S = 0.1
# a 100ms bucket with zero packets would yield bandwidth 0, violating the
# bandwidth > 0 invariant; floored instead
MAHIMAHI_EMPTY_BUCKET_KBPS = 1.0

MIN_TRACE_SAMPLES = 2
MIN_TRACE_DURATION_S = 10.0

FILTER_MIN_KBPS = 500.0
FILTER_MAX_AVG_KBPS = 4000.0

DEFAULT_BASE_OWD_MS = 40.0
SYNTH_RESOLUTION_S = 0.1


@dataclass(frozen=True)
class TraceSample:
    timestamp: float   # seconds
    bandwidth: float   # kbps


@dataclass(frozen=True)
class NetworkTrace:
    id: str
    samples: tuple[TraceSample, ...]
    base_owd: float = DEFAULT_BASE_OWD_MS     # one-way delay, ms
    jitter_amplitude: float = 0.0             # ms

    def __post_init__(self):
        if len(self.samples) < MIN_TRACE_SAMPLES:
            raise ValidationError(f"trace {self.id}: needs >= {MIN_TRACE_SAMPLES} samples")
        prev = -1.0
        for s in self.samples:
            if s.timestamp < 0 or s.timestamp <= prev:
                raise ValidationError(
                    f"trace {self.id}: timestamps must be non-negative, strictly increasing"
                )
            if s.bandwidth <= 0:
                raise ValidationError(f"trace {self.id}: bandwidth must be > 0 at t={s.timestamp}")
            prev = s.timestamp
        if self.duration < MIN_TRACE_DURATION_S:
            raise ValidationError(
                f"trace {self.id}: duration {self.duration:.2f}s < {MIN_TRACE_DURATION_S}s"
            )
        # precompute the timestamp array for bisect queries
        object.__setattr__(self, "_times", [s.timestamp for s in self.samples])

    @property
    def duration(self) -> float:
        return self.samples[-1].timestamp

    @property
    def avg_bandwidth(self) -> float:
        """Time-weighted mean bandwidth over the trace duration (kbps)."""
        total = 0.0
        for a, b in zip(self.samples, self.samples[1:]):
            total += a.bandwidth * (b.timestamp - a.timestamp)
        return total / self.duration if self.duration > 0 else self.samples[0].bandwidth

    @property
    def min_bandwidth(self) -> float:
        return min(s.bandwidth for s in self.samples)


@dataclass
class TraceCorpus:
    traces: list[NetworkTrace]
    split_seed: int = 0


def bandwidth_at(trace: NetworkTrace, t: float) -> float:
    """Zero-order-hold bandwidth query: latest sample with timestamp <= t."""
    if t < 0 or t > trace.duration:
        raise OutOfRange(f"t={t} outside [0, {trace.duration}]")
    idx = bisect.bisect_right(trace._times, t) - 1
    if idx < 0:
        # t before the first sample; hold the first value backwards
        idx = 0
    return trace.samples[idx].bandwidth


def load_trace(path, format: str = "csv", trace_id: str | None = None,
               base_owd: float = DEFAULT_BASE_OWD_MS) -> NetworkTrace:
    """Load a trace file. `format` is 'csv' or 'mahimahi'."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    tid = trace_id or path.stem
    if format == "csv":
        return _load_csv(path, tid, base_owd)
    if format in ("mahimahi", "mahimahi-style"):
        return _load_mahimahi(path, tid, base_owd)
    raise ParseError(f"unknown trace format: {format}")


def _load_csv(path: Path, tid: str, base_owd: float) -> NetworkTrace:
    samples = []
    owd = base_owd
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and not _is_number(parts[0]):
                continue  # optional header
            if len(parts) not in (2, 3):
                raise ParseError(f"{path}:{lineno}: expected 2 or 3 columns")
            try:
                t = float(parts[0])
                bw = float(parts[1])
                if len(parts) == 3:
                    owd = float(parts[2])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            samples.append(TraceSample(t, bw))
    return NetworkTrace(id=tid, samples=tuple(samples), base_owd=owd)


def _load_mahimahi(path: Path, tid: str, base_owd: float) -> NetworkTrace:
    """mahimahi-style: one integer ms per line = one 1500-byte packet delivery.

    Converted to kbps over 100ms buckets. Empty buckets are floored at
    MAHIMAHI_EMPTY_BUCKET_KBPS so the bandwidth > 0 invariant holds.
    """
    stamps_ms = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                stamps_ms.append(int(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: expected an integer millisecond") from None
    if not stamps_ms:
        raise ParseError(f"{path}: empty mahimahi trace")
    bucket_ms = int(MAHIMAHI_BUCKET_S * 1000)
    n_buckets = stamps_ms[-1] // bucket_ms + 1
    counts = [0] * n_buckets
    prev = -1
    for lineno, ms in enumerate(stamps_ms, 1):
        if ms < prev:
            raise ValidationError(f"{path}: non-monotone timestamp at line {lineno}")
        prev = ms
        counts[ms // bucket_ms] += 1
    samples = []
    for i, c in enumerate(counts):
        kbps = c * MAHIMAHI_PACKET_BYTES * 8 / MAHIMAHI_BUCKET_S / 1000.0
        samples.append(TraceSample(i * MAHIMAHI_BUCKET_S, max(kbps, MAHIMAHI_EMPTY_BUCKET_KBPS)))
    return NetworkTrace(id=tid, samples=tuple(samples), base_owd=base_owd)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# --- synthesis ---------------------------------------------------------------

@dataclass
class SynthSegment:
    kind: str            # constant | ramp | step | sinusoid
    duration_s: float
    start_kbps: float
    end_kbps: float | None = None   # ramp/step target; sinusoid peak

    def level_at(self, t: float) -> float:
        end = self.end_kbps if self.end_kbps is not None else self.start_kbps
        if self.kind == "constant":
            return self.start_kbps
        if self.kind == "ramp":
            return self.start_kbps + (end - self.start_kbps) * (t / self.duration_s)
        if self.kind == "step":
            return self.start_kbps if t < self.duration_s / 2 else end
        if self.kind == "sinusoid":
            import math
            mid = (self.start_kbps + end) / 2
            amp = (end - self.start_kbps) / 2
            return mid + amp * math.sin(2 * math.pi * t / self.duration_s)
        raise InvalidSpec(f"unknown segment kind: {self.kind}")


@dataclass
class SynthSpec:
    segments: list[SynthSegment]
    jitter_ms: float = 0.0
    noise_kbps: float = 0.0
    seed: int = 0
    base_owd: float = DEFAULT_BASE_OWD_MS
    trace_id: str = "synth"

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        segs = [SynthSegment(kind=s["kind"], duration_s=float(s["duration_s"]),
                             start_kbps=float(s["start_kbps"]),
                             end_kbps=float(s["end_kbps"]) if "end_kbps" in s else None)
                for s in d.get("segments", [])]
        return cls(segments=segs,
                   jitter_ms=float(d.get("jitter_ms", 0.0)),
                   noise_kbps=float(d.get("noise_kbps", 0.0)),
                   seed=int(d.get("seed", 0)),
                   base_owd=float(d.get("base_owd", DEFAULT_BASE_OWD_MS)),
                   trace_id=str(d.get("trace_id", "synth")))

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def synthesize_trace(spec: SynthSpec) -> NetworkTrace:
    """Realize a piecewise bandwidth schedule at 0.1s resolution."""
    if not spec.segments:
        raise InvalidSpec("at least one segment required")
    for seg in spec.segments:
        if seg.duration_s <= 0:
            raise InvalidSpec(f"segment duration must be > 0, got {seg.duration_s}")
        levels = [seg.start_kbps] + ([seg.end_kbps] if seg.end_kbps is not None else [])
        if any(lv <= 0 for lv in levels):
            raise InvalidSpec("segment bandwidth levels must be > 0")
    rng = random.Random(spec.seed)
    samples = []
    t0 = 0.0
    for seg in spec.segments:
        n = max(1, round(seg.duration_s / SYNTH_RESOLUTION_S))
        for i in range(n):
            local = i * SYNTH_RESOLUTION_S
            bw = seg.level_at(local)
            if spec.noise_kbps > 0:
                bw += rng.uniform(-spec.noise_kbps, spec.noise_kbps)
            samples.append(TraceSample(round(t0 + local, 6), max(bw, 1.0)))
        t0 += n * SYNTH_RESOLUTION_S
    # closing sample so duration matches the schedule exactly
    samples.append(TraceSample(round(t0, 6), samples[-1].bandwidth))
    return NetworkTrace(id=spec.trace_id, samples=tuple(samples),
                        base_owd=spec.base_owd, jitter_amplitude=spec.jitter_ms)


# --- corpus operations -------------------------------------------------------

def filter_corpus(traces: list[NetworkTrace]) -> list[NetworkTrace]:
    """Keep traces with min bandwidth >= 500 kbps and avg <= 4000 kbps (inclusive)."""
    return [t for t in traces
            if t.min_bandwidth >= FILTER_MIN_KBPS and t.avg_bandwidth <= FILTER_MAX_AVG_KBPS]


def split_corpus(corpus: TraceCorpus, train_fraction: float = 0.8
                 ) -> tuple[list[NetworkTrace], list[NetworkTrace]]:
    """Deterministic random split; train gets floor(n * fraction) traces."""
    if not corpus.traces:
        raise EmptyCorpus("cannot split an empty corpus")
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0,1), got {train_fraction}")
    order = list(range(len(corpus.traces)))
    random.Random(corpus.split_seed).shuffle(order)
    n_train = max(1, min(len(order) - 1, int(len(order) * train_fraction)))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return ([corpus.traces[i] for i in train_idx], [corpus.traces[i] for i in test_idx])


def save_trace_csv(trace: NetworkTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("timestamp_s,bandwidth_kbps,owd_ms\n")
        for s in trace.samples:
            f.write(f"{s.timestamp:.6g},{s.bandwidth:.6g},{trace.base_owd:.6g}\n")
