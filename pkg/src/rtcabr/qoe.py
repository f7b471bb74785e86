"""Reward, state normalization, fairness, CDFs, and session summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyLog, ValidationError


@dataclass(frozen=True)
class RewardWeights:
    quality: float = 10.0    # lambda
    delay: float = 0.12      # mu, per ms
    stall: float = 70.0      # nu

    def __post_init__(self):
        if self.quality <= 0 or self.delay <= 0 or self.stall <= 0:
            raise ValidationError("reward weights must all be > 0")


def reward(w: RewardWeights, q: float, d: float, h: float) -> float:
    """r = lambda*q - mu*d - nu*h (d in milliseconds, h in [0,1])."""
    if not 0.0 <= h <= 1.0:
        raise ValidationError(f"stall rate {h} outside [0,1]")
    if d < 0:
        raise ValidationError(f"delay {d} must be >= 0")
    return w.quality * q - w.delay * d - w.stall * h


@dataclass(frozen=True)
class NormalizationConfig:
    si_max: float = 128.0
    ti_max: float = 64.0
    crf_max: float = 51.0
    rtt_max_ms: float = 1000.0

    def __post_init__(self):
        if min(self.si_max, self.ti_max, self.crf_max, self.rtt_max_ms) <= 0:
            raise ValidationError("normalization constants must be > 0")


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def normalize_state(si: float, ti: float, iflag: float, crf: float,
                    h: float, d: float, p: float,
                    norms: NormalizationConfig) -> tuple[float, ...]:
    """Scale the seven raw factors into [0,1] (clamped)."""
    return (
        _clamp01(si / norms.si_max),
        _clamp01(ti / norms.ti_max),
        _clamp01(iflag),
        _clamp01(crf / norms.crf_max),
        _clamp01(h),
        _clamp01(d / norms.rtt_max_ms),
        _clamp01(p),
    )


def jain_index(rates: list[float]) -> float:
    """(sum x)^2 / (n * sum x^2); 1.0 means perfectly equal shares."""
    if not rates or all(r == 0 for r in rates):
        raise ValidationError("jain index needs at least one positive rate")
    s = sum(rates)
    s2 = sum(r * r for r in rates)
    return (s * s) / (len(rates) * s2)


def cdf(values: list[float]) -> list[tuple[float, float]]:
    """Sorted empirical CDF as (value, cumulative fraction) pairs."""
    if not values:
        raise EmptyLog("cdf of empty list")
    ordered = sorted(values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]


def quantile(values: list[float], q: float) -> float:
    """Quantile with lower interpolation (median of [1,2,3,4] at 0.5 is 2)."""
    if not values:
        raise EmptyLog("quantile of empty list")
    ordered = sorted(values)
    idx = max(0, int(q * len(ordered)) - (1 if q * len(ordered) == int(q * len(ordered)) else 0))
    idx = min(idx, len(ordered) - 1)
    return ordered[idx]


@dataclass
class SessionReport:
    avg_bitrate: float      # kbps
    avg_quality: float
    avg_rtt: float          # ms
    avg_stall: float
    avg_loss: float
    reward_sum: float
    intervals: int
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "avg_bitrate_kbps": self.avg_bitrate,
            "avg_quality": self.avg_quality,
            "avg_rtt_ms": self.avg_rtt,
            "avg_stall": self.avg_stall,
            "avg_loss": self.avg_loss,
            "reward_sum": self.reward_sum,
            "intervals": self.intervals,
        }


def summarize(log, weights: RewardWeights | None = None) -> SessionReport:
    """Aggregate a SessionLog into session-level means.

    `log` is a netsim.SessionLog; all averages are plain arithmetic means over
    the interval series so they are recomputable from the series.
    """
    if not log.intervals:
        raise EmptyLog("cannot summarize an empty session log")
    w = weights or RewardWeights()
    n = len(log.intervals)
    avg_bitrate = sum(iv.sent_kbps for iv in log.intervals) / n
    avg_quality = sum(iv.quality for iv in log.intervals) / n
    avg_rtt = sum(iv.rtt_ms for iv in log.intervals) / n
    avg_stall = sum(iv.stall_rate for iv in log.intervals) / n
    avg_loss = sum(iv.loss_rate for iv in log.intervals) / n
    reward_sum = sum(reward(w, iv.quality, iv.rtt_ms, iv.stall_rate) for iv in log.intervals)
    series = {
        "time_s": [iv.time_s for iv in log.intervals],
        "crf": [iv.crf for iv in log.intervals],
        "sent_kbps": [iv.sent_kbps for iv in log.intervals],
        "bandwidth_kbps": [iv.bandwidth_kbps for iv in log.intervals],
        "rtt_ms": [iv.rtt_ms for iv in log.intervals],
        "loss": [iv.loss_rate for iv in log.intervals],
        "stall": [iv.stall_rate for iv in log.intervals],
        "quality": [iv.quality for iv in log.intervals],
    }
    return SessionReport(avg_bitrate=avg_bitrate, avg_quality=avg_quality,
                         avg_rtt=avg_rtt, avg_stall=avg_stall, avg_loss=avg_loss,
                         reward_sum=reward_sum, intervals=n, series=series)
