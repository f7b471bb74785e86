"""Frame-level trace-driven fluid simulation of video flows over a bottleneck.

One shared drop-tail FIFO (byte-granular) drains at the trace bandwidth,
sub-stepped at 10 ms so mid-interval bandwidth changes are honored. With
several flows, each sub-step's drain capacity is split in proportion to each
flow's queued bytes.

Stall rule (frames attributed to their capture interval, evaluated at the
interval close t_close): a frame is stalled iff it was dropped, or it was
delivered by t_close later than capture + playout_delay, or it is still
undelivered at t_close with its playout deadline already passed. A frame still
in flight whose deadline has not yet passed counts as on time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .codec import (
    CodecConfig,
    LaggedEncoderState,
    crf_for_target_bitrate,
    frame_size,
    quality_proxy,
)
from .content import VideoProfile, interval_complexity
from .errors import FrameNotDelivered, IntervalNotClosed, ValidationError
from .traces import NetworkTrace, bandwidth_at

SUBSTEP_S = 0.01
DEFAULT_MAX_QUEUE_MS = 500.0
DEFAULT_PLAYOUT_DELAY_MS = 100.0
DEFAULT_INTERVAL_S = 0.2


@dataclass
class FrameInFlight:
    flow_id: int
    frame_index: int
    capture_time: float
    size: int
    remaining: float
    delivery_time: float | None = None

    @property
    def delivered(self) -> bool:
        return self.delivery_time is not None


@dataclass
class FrameEvent:
    flow_id: int
    frame_index: int
    capture_time: float
    size: int
    crf: int
    dropped: bool
    delivery_time: float | None
    rtt_ms: float | None
    stalled: bool


@dataclass
class IntervalMeasurement:
    interval_index: int
    rtt: float           # ms, mean over the interval
    loss_rate: float
    stall_rate: float
    sent_bitrate: float  # kbps

    def __post_init__(self):
        if not 0.0 <= self.loss_rate <= 1.0 or not 0.0 <= self.stall_rate <= 1.0:
            raise ValidationError("loss/stall rates must be in [0,1]")


@dataclass
class IntervalRecord:
    interval_index: int
    time_s: float
    crf: int
    sent_kbps: float
    bandwidth_kbps: float
    rtt_ms: float
    loss_rate: float
    stall_rate: float
    quality: float


@dataclass
class SessionLog:
    intervals: list[IntervalRecord] = field(default_factory=list)
    frames: list[FrameEvent] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_delivered: int = 0
    bytes_lost: int = 0
    bytes_residual: int = 0
    playout_delay_ms: float = DEFAULT_PLAYOUT_DELAY_MS
    interval_s: float = DEFAULT_INTERVAL_S

    def to_interval_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("interval,time_s,crf,sent_kbps,bandwidth_kbps,rtt_ms,loss,stall\n")
            for iv in self.intervals:
                f.write(f"{iv.interval_index},{iv.time_s:.6g},{iv.crf},{iv.sent_kbps:.6g},"
                        f"{iv.bandwidth_kbps:.6g},{iv.rtt_ms:.6g},{iv.loss_rate:.6g},"
                        f"{iv.stall_rate:.6g}\n")

    def to_frame_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("flow,frame,capture_s,size_bytes,crf,dropped,delivery_s,rtt_ms,stalled\n")
            for ev in self.frames:
                dt = "" if ev.delivery_time is None else f"{ev.delivery_time:.6g}"
                rt = "" if ev.rtt_ms is None else f"{ev.rtt_ms:.6g}"
                f.write(f"{ev.flow_id},{ev.frame_index},{ev.capture_time:.6g},{ev.size},"
                        f"{ev.crf},{int(ev.dropped)},{dt},{rt},{int(ev.stalled)}\n")


class Link:
    """Shared bottleneck: drop-tail fluid FIFO driven by a bandwidth trace."""

    def __init__(self, trace: NetworkTrace, max_queue_ms: float = DEFAULT_MAX_QUEUE_MS,
                 loop_trace: bool = True, seed: int = 0):
        self.trace = trace
        self.max_queue_ms = max_queue_ms
        self.loop_trace = loop_trace
        self.clock = 0.0
        self.queue: list[FrameInFlight] = []
        self.queue_bytes = 0.0
        self._jitter_rng = random.Random(seed)

    def bandwidth_kbps(self, t: float | None = None) -> float:
        t = self.clock if t is None else t
        if self.loop_trace and t > self.trace.duration:
            t = t % self.trace.duration
        return bandwidth_at(self.trace, t)

    def queue_capacity_bytes(self) -> float:
        return self.max_queue_ms / 1000.0 * self.bandwidth_kbps() * 1000.0 / 8.0

    def jitter_ms(self) -> float:
        amp = self.trace.jitter_amplitude
        if amp == 0.0:
            return 0.0
        return self._jitter_rng.uniform(-amp, amp)

    def enqueue(self, frame: FrameInFlight) -> bool:
        """Append to the FIFO; returns False (drop-tail) when over capacity."""
        if self.queue_bytes + frame.size > self.queue_capacity_bytes():
            return False
        self.queue.append(frame)
        self.queue_bytes += frame.size
        return True

    def advance(self, dt: float) -> list[FrameInFlight]:
        """Drain the FIFO for dt seconds; returns frames completed in this span."""
        if dt <= 0:
            raise ValidationError(f"dt must be > 0, got {dt}")
        completed: list[FrameInFlight] = []
        remaining_dt = dt
        while remaining_dt > 1e-12:
            step = min(SUBSTEP_S, remaining_dt)
            bw_bytes_s = self.bandwidth_kbps() * 1000.0 / 8.0
            capacity = bw_bytes_s * step
            if self.queue:
                flows_queued: dict[int, float] = {}
                for fr in self.queue:
                    flows_queued[fr.flow_id] = flows_queued.get(fr.flow_id, 0.0) + fr.remaining
                total_queued = sum(flows_queued.values())
                if total_queued <= capacity:
                    drained_before = 0.0
                    for fr in self.queue:
                        drained_before += fr.remaining
                        fr.remaining = 0.0
                        fr.delivery_time = self.clock + (
                            drained_before / bw_bytes_s if bw_bytes_s > 0 else step)
                        completed.append(fr)
                    self.queue.clear()
                    self.queue_bytes = 0.0
                else:
                    budgets = {fid: capacity * q / total_queued
                               for fid, q in flows_queued.items()}
                    rates = {fid: b / step for fid, b in budgets.items()}
                    consumed = dict.fromkeys(budgets, 0.0)
                    survivors = []
                    for fr in self.queue:
                        budget = budgets[fr.flow_id] - consumed[fr.flow_id]
                        if budget <= 1e-12:
                            survivors.append(fr)
                            continue
                        take = min(fr.remaining, budget)
                        fr.remaining -= take
                        consumed[fr.flow_id] += take
                        self.queue_bytes -= take
                        if fr.remaining <= 1e-9:
                            fr.remaining = 0.0
                            fr.delivery_time = self.clock + consumed[fr.flow_id] / rates[fr.flow_id]
                            completed.append(fr)
                        else:
                            survivors.append(fr)
                    self.queue = survivors
            self.clock += step
            remaining_dt -= step
        return completed


def frame_rtt_ms(base_owd_ms: float, frame: FrameInFlight, jitter_ms: float = 0.0) -> float:
    """RTT = 2*base_owd + delivery delay (s -> ms) + jitter."""
    if not frame.delivered:
        raise FrameNotDelivered(f"frame {frame.frame_index} of flow {frame.flow_id}")
    return 2.0 * base_owd_ms + (frame.delivery_time - frame.capture_time) * 1000.0 + jitter_ms


@dataclass
class _FrameStatus:
    capture_time: float
    size: int
    crf: int
    dropped: bool = False
    delivery_time: float | None = None


class Session:
    """One video flow on a link, driven one decision interval at a time.

    Single-flow use: `step(crf)` runs a whole interval. Multi-flow use: a
    driver calls `open_interval`, feeds planned frames through the shared
    link, dispatches completions via `on_delivered`, then calls
    `close_interval`.
    """

    def __init__(self, link: Link, profile: VideoProfile, codec_cfg: CodecConfig,
                 flow_id: int = 0, interval_s: float = DEFAULT_INTERVAL_S,
                 playout_delay_ms: float = DEFAULT_PLAYOUT_DELAY_MS,
                 start_offset_s: float = 0.0, profile_offset: int = 0):
        self.link = link
        self.profile = profile
        self.codec_cfg = codec_cfg
        self.interval_s = interval_s
        self.flow_id = flow_id
        self.playout_delay_ms = playout_delay_ms
        self.start_offset_s = start_offset_s
        self.profile_offset = profile_offset
        self.frames_per_interval = max(1, round(profile.fps * interval_s))
        self.interval_index = 0
        self.log = SessionLog(playout_delay_ms=playout_delay_ms, interval_s=interval_s)
        self._status: dict[int, _FrameStatus] = {}   # frame_index -> status
        self._interval_frames: list[int] = []        # captured this interval
        self._rtt_samples: list[float] = []
        self._last_rtt_ms = 2.0 * link.trace.base_owd
        self._open = False
        self.lagged_encoder: LaggedEncoderState | None = None

    # --- content/complexity helpers ------------------------------------------

    def next_complexity(self) -> tuple[float, float, int]:
        start = self.profile_offset + self.interval_index * self.frames_per_interval
        return interval_complexity(self.profile, start, start + self.frames_per_interval)

    def resolve_bitrate_target(self, target_kbps: float) -> int:
        """Route a legacy bitrate target through the lagged encoder + CRF inversion."""
        if self.lagged_encoder is None:
            self.lagged_encoder = LaggedEncoderState(actual_bitrate=target_kbps)
        actual = self.lagged_encoder.step(target_kbps, self.interval_s)
        start = self.profile_offset + self.interval_index * self.frames_per_interval
        window = [self.profile.frame(i)
                  for i in range(start, start + self.frames_per_interval)]
        return crf_for_target_bitrate(self.codec_cfg, window, actual, self.profile.fps)

    # --- interval protocol (used directly by multi-flow drivers) -------------

    def interval_start_time(self) -> float:
        return self.start_offset_s + self.interval_index * self.interval_s

    def open_interval(self, crf: int) -> list[tuple[float, int, int]]:
        """Plan this interval's frames; returns (capture_time, frame_index, size)."""
        if self._open:
            raise IntervalNotClosed(f"flow {self.flow_id}: previous interval still open")
        self._open = True
        self._crf = crf
        self._interval_frames = []
        base_t = self.interval_start_time()
        start = self.profile_offset + self.interval_index * self.frames_per_interval
        frame_dt = 1.0 / self.profile.fps
        planned = []
        for j in range(self.frames_per_interval):
            rec = self.profile.frame(start + j)
            size = frame_size(self.codec_cfg, rec, crf)
            planned.append((base_t + j * frame_dt, start + j, size))
        return planned

    def enqueue_planned(self, capture_time: float, frame_index: int, size: int) -> None:
        st = _FrameStatus(capture_time=capture_time, size=size, crf=self._crf)
        self._status[frame_index] = st
        self._interval_frames.append(frame_index)
        self.log.bytes_sent += size
        fr = FrameInFlight(flow_id=self.flow_id, frame_index=frame_index,
                           capture_time=capture_time, size=size, remaining=float(size))
        if not self.link.enqueue(fr):
            st.dropped = True
            self.log.bytes_lost += size
            self.log.frames.append(FrameEvent(
                flow_id=self.flow_id, frame_index=frame_index, capture_time=capture_time,
                size=size, crf=self._crf, dropped=True, delivery_time=None, rtt_ms=None,
                stalled=True))

    def on_delivered(self, fr: FrameInFlight) -> None:
        st = self._status[fr.frame_index]
        st.delivery_time = fr.delivery_time
        jitter = self.link.jitter_ms()
        rtt = frame_rtt_ms(self.link.trace.base_owd, fr, jitter)
        self._rtt_samples.append(rtt)
        self.log.bytes_delivered += fr.size
        late = (fr.delivery_time - fr.capture_time) * 1000.0 > self.playout_delay_ms
        self.log.frames.append(FrameEvent(
            flow_id=self.flow_id, frame_index=fr.frame_index, capture_time=fr.capture_time,
            size=fr.size, crf=st.crf, dropped=False, delivery_time=fr.delivery_time,
            rtt_ms=rtt, stalled=late))

    def _frame_stalled_at(self, st: _FrameStatus, t_close: float) -> bool:
        if st.dropped:
            return True
        deadline = st.capture_time + self.playout_delay_ms / 1000.0
        if st.delivery_time is not None and st.delivery_time <= t_close + 1e-9:
            return st.delivery_time > deadline
        return t_close > deadline

    def close_interval(self) -> IntervalMeasurement:
        if not self._open:
            raise IntervalNotClosed(f"flow {self.flow_id}: no open interval")
        t_close = self.interval_start_time() + self.interval_s
        n = len(self._interval_frames)
        stalled = 0
        bytes_sent = 0
        bytes_lost = 0
        for idx in self._interval_frames:
            st = self._status[idx]
            bytes_sent += st.size
            if st.dropped:
                bytes_lost += st.size
            if self._frame_stalled_at(st, t_close):
                stalled += 1
        stall_rate = stalled / n if n else 0.0
        loss_rate = bytes_lost / bytes_sent if bytes_sent else 0.0
        if self._rtt_samples:
            rtt = sum(self._rtt_samples) / len(self._rtt_samples)
            self._last_rtt_ms = rtt
        else:
            rtt = self._last_rtt_ms
        self._rtt_samples = []
        sent_kbps = bytes_sent * 8.0 / self.interval_s / 1000.0
        meas = IntervalMeasurement(interval_index=self.interval_index, rtt=rtt,
                                   loss_rate=loss_rate, stall_rate=stall_rate,
                                   sent_bitrate=sent_kbps)
        self.log.intervals.append(IntervalRecord(
            interval_index=self.interval_index, time_s=self.interval_start_time(),
            crf=self._crf, sent_kbps=sent_kbps,
            bandwidth_kbps=self.link.bandwidth_kbps(self.interval_start_time()),
            rtt_ms=rtt, loss_rate=loss_rate, stall_rate=stall_rate,
            quality=quality_proxy(self.codec_cfg, self._crf)))
        self.interval_index += 1
        self._open = False
        return meas

    # --- single-flow convenience ---------------------------------------------

    def step(self, crf: int) -> IntervalMeasurement:
        """Run one full interval at the given CRF (single flow on the link)."""
        drive_interval(self.link, [(self, crf)])
        return self._last_measurement

    def finish(self) -> SessionLog:
        """Close out: account residual queue bytes, log undelivered frames."""
        for idx, st in self._status.items():
            if not st.dropped and st.delivery_time is None:
                self.log.bytes_residual += st.size
                self.log.frames.append(FrameEvent(
                    flow_id=self.flow_id, frame_index=idx, capture_time=st.capture_time,
                    size=st.size, crf=st.crf, dropped=False, delivery_time=None,
                    rtt_ms=None, stalled=True))
        return self.log


def drive_interval(link: Link, items: list[tuple[Session, int]]) -> None:
    """Run one aligned decision interval for all sessions on a shared link."""
    events = []
    for session, crf in items:
        for capture, idx, size in session.open_interval(crf):
            events.append((capture, session.flow_id, session, idx, size))
    events.sort(key=lambda e: (e[0], e[1]))
    end_t = max(s.interval_start_time() + s.interval_s for s, _ in items)

    def dispatch(completed):
        by_flow = {s.flow_id: s for s, _ in items}
        for fr in completed:
            owner = by_flow.get(fr.flow_id)
            if owner is not None:
                owner.on_delivered(fr)

    for capture, _, session, idx, size in events:
        if capture > link.clock + 1e-12:
            dispatch(link.advance(capture - link.clock))
        session.enqueue_planned(capture, idx, size)
    if end_t > link.clock + 1e-12:
        dispatch(link.advance(end_t - link.clock))
    for session, _ in items:
        session._last_measurement = session.close_interval()


def run_session(controller, trace: NetworkTrace, profile: VideoProfile,
                codec_cfg: CodecConfig, duration_s: float,
                interval_s: float = DEFAULT_INTERVAL_S,
                max_queue_ms: float = DEFAULT_MAX_QUEUE_MS,
                playout_delay_ms: float = DEFAULT_PLAYOUT_DELAY_MS,
                seed: int = 0) -> SessionLog:
    """Run a controller over one trace for `duration_s` seconds."""
    link = Link(trace, max_queue_ms=max_queue_ms, seed=seed)
    session = Session(link, profile, codec_cfg, interval_s=interval_s,
                      playout_delay_ms=playout_delay_ms)
    controller.reset(seed=seed)
    n_intervals = int(round(duration_s / interval_s))
    measurement = None
    for _ in range(n_intervals):
        complexity = session.next_complexity()
        decision = controller.decide(measurement, complexity)
        if decision.crf is not None:
            crf = decision.crf
        else:
            crf = session.resolve_bitrate_target(decision.bitrate_target)
        measurement = session.step(crf)
        controller.observe(measurement, crf, complexity)
    return session.finish()


def run_multiflow(controller_factories, trace: NetworkTrace, profiles,
                  codec_cfg: CodecConfig, duration_s: float,
                  join_times_s, interval_s: float = DEFAULT_INTERVAL_S,
                  max_queue_ms: float = DEFAULT_MAX_QUEUE_MS,
                  playout_delay_ms: float = DEFAULT_PLAYOUT_DELAY_MS,
                  seed: int = 0) -> list[SessionLog]:
    """Run several flows over one shared link; flow i joins at join_times_s[i].

    Join times must be multiples of the interval so decision epochs align.
    """
    for jt in join_times_s:
        if abs(jt / interval_s - round(jt / interval_s)) > 1e-9:
            raise ValidationError(f"join time {jt} not aligned to interval {interval_s}")
    link = Link(trace, max_queue_ms=max_queue_ms, seed=seed)
    sessions = []
    controllers = []
    for i, (factory, profile, jt) in enumerate(zip(controller_factories, profiles, join_times_s)):
        sessions.append(Session(link, profile, codec_cfg, flow_id=i,
                                interval_s=interval_s, playout_delay_ms=playout_delay_ms,
                                start_offset_s=jt))
        ctrl = factory()
        ctrl.reset(seed=seed + i)
        controllers.append(ctrl)
    measurements: list[IntervalMeasurement | None] = [None] * len(sessions)
    n_intervals = int(round(duration_s / interval_s))
    for k in range(n_intervals):
        t = k * interval_s
        items = []
        active = []
        for i, session in enumerate(sessions):
            if t + 1e-9 < session.start_offset_s:
                continue
            complexity = session.next_complexity()
            decision = controllers[i].decide(measurements[i], complexity)
            if decision.crf is not None:
                crf = decision.crf
            else:
                crf = session.resolve_bitrate_target(decision.bitrate_target)
            items.append((session, crf))
            active.append((i, complexity))
        if not items:
            link.advance(interval_s)
            continue
        drive_interval(link, items)
        for (i, complexity), (session, crf) in zip(active, items):
            measurements[i] = session._last_measurement
            controllers[i].observe(measurements[i], crf, complexity)
    return [s.finish() for s in sessions]
