"""Rate controllers: the learned CRF agent and rules-based baselines.

Every controller implements the same interface:
    reset(seed)                      -> start of a session
    decide(measurement, complexity)  -> ControlDecision (crf or bitrate target)
    observe(measurement, crf, complexity) -> feedback after the interval ran

`measurement` is None on the first call of a session.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .codec import CRF_DELTAS, CodecConfig, apply_delta_crf
from .errors import ValidationError
from .neural import PolicyModel, SEQ_LEN
from .qoe import NormalizationConfig, normalize_state


@dataclass(frozen=True)
class Action:
    index: int

    @property
    def delta(self) -> int:
        return CRF_DELTAS[self.index]


@dataclass
class ControlDecision:
    crf: int | None = None
    bitrate_target: float | None = None


class StateWindow:
    """Seven ring buffers of the last k=6 normalized factor values.

    Buffers are zero-padded until six intervals have elapsed.
    """

    FACTORS = ("si", "ti", "iflag", "crf", "stall", "rtt", "loss")

    def __init__(self, k: int = SEQ_LEN):
        self.k = k
        self.buffers = {name: [0.0] * k for name in self.FACTORS}

    def push(self, si, ti, iflag, crf, stall, rtt, loss):
        for name, value in zip(self.FACTORS, (si, ti, iflag, crf, stall, rtt, loss)):
            buf = self.buffers[name]
            buf.pop(0)
            buf.append(float(value))

    def content_matrix(self) -> np.ndarray:
        """(k, 4) content-factor sequence: si, ti, iflag, crf."""
        return np.stack([self.buffers[n] for n in ("si", "ti", "iflag", "crf")], axis=1)

    def network_matrix(self) -> np.ndarray:
        """(k, 3) network-factor sequence: stall, rtt, loss."""
        return np.stack([self.buffers[n] for n in ("stall", "rtt", "loss")], axis=1)

    def copy(self) -> "StateWindow":
        w = StateWindow(self.k)
        w.buffers = {n: list(b) for n, b in self.buffers.items()}
        return w


def build_state(window: StateWindow, measurement, complexity, crf_applied: int,
                norms: NormalizationConfig,
                disable_content_factors: bool = False) -> StateWindow:
    """Advance the window by one interval (returns the same, mutated window)."""
    si, ti, iflag = complexity
    vec = normalize_state(si, ti, iflag, crf_applied, measurement.stall_rate,
                          measurement.rtt, measurement.loss_rate, norms)
    if disable_content_factors:
        vec = (0.0, 0.0) + vec[2:]
    window.push(*vec)
    return window


def palette_select_action(model: PolicyModel, window: StateWindow, mode: str,
                          rng: random.Random | None = None) -> Action:
    """Sample from the actor's distribution, or take the greedy argmax.

    Greedy ties break to the lowest index.
    """
    probs = model.actor_forward(window.content_matrix(), window.network_matrix())
    if mode == "greedy":
        return Action(int(np.argmax(probs)))
    if mode == "sample":
        if rng is None:
            raise ValidationError("sample mode needs an rng")
        u = rng.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u <= acc:
                return Action(i)
        return Action(len(probs) - 1)
    raise ValidationError(f"unknown selection mode: {mode}")


def advantage(r: float, v_next: float, v_now: float, gamma: float) -> float:
    """A = r + gamma * V(s') - V(s); terminal transitions pass v_next = 0."""
    return r + gamma * v_next - v_now


@dataclass
class Transition:
    content: np.ndarray      # (k, 4) state
    network: np.ndarray      # (k, 3) state
    action: int
    reward: float
    next_content: np.ndarray
    next_network: np.ndarray
    terminal: bool


class PaletteController:
    """Learned controller: GRU actor maps the factor window to a CRF delta."""

    def __init__(self, model: PolicyModel, codec_cfg: CodecConfig,
                 norms: NormalizationConfig | None = None,
                 mode: str = "greedy", initial_crf: int = 36,
                 disable_content_factors: bool = False):
        self.model = model
        self.codec_cfg = codec_cfg
        self.norms = norms or NormalizationConfig()
        self.mode = mode
        self.initial_crf = initial_crf
        self.disable_content_factors = disable_content_factors

    def reset(self, seed: int = 0):
        self.window = StateWindow()
        self.crf = self.initial_crf
        self.rng = random.Random(seed)

    def decide(self, measurement, complexity) -> ControlDecision:
        if measurement is not None:
            action = palette_select_action(self.model, self.window, self.mode, self.rng)
            self.crf = apply_delta_crf(self.crf, action.delta, self.codec_cfg)
        return ControlDecision(crf=self.crf)

    def observe(self, measurement, crf, complexity):
        build_state(self.window, measurement, complexity, crf, self.norms,
                    self.disable_content_factors)


class FixedCrfController:
    """Constant CRF, no adaptation."""

    def __init__(self, crf: int):
        self.crf = crf

    def reset(self, seed: int = 0):
        pass

    def decide(self, measurement, complexity) -> ControlDecision:
        return ControlDecision(crf=self.crf)

    def observe(self, measurement, crf, complexity):
        pass


class ThroughputTargetController:
    """Simplified throughput-tracking baseline: target = safety * measured rate.

    Harvests bandwidth by probing upward whenever the last interval showed no
    loss and no stall, backing off multiplicatively otherwise.
    """

    def __init__(self, initial_kbps: float = 800.0, safety: float = 0.95,
                 probe_gain: float = 1.08, backoff: float = 0.85,
                 min_kbps: float = 100.0, max_kbps: float = 6000.0):
        self.initial_kbps = initial_kbps
        self.safety = safety
        self.probe_gain = probe_gain
        self.backoff = backoff
        self.min_kbps = min_kbps
        self.max_kbps = max_kbps

    def reset(self, seed: int = 0):
        self.target = self.initial_kbps

    def decide(self, measurement, complexity) -> ControlDecision:
        if measurement is not None:
            if measurement.loss_rate > 0.0 or measurement.stall_rate > 0.0:
                self.target *= self.backoff
            else:
                self.target = max(self.target,
                                  self.safety * measurement.sent_bitrate) * self.probe_gain
        self.target = min(max(self.target, self.min_kbps), self.max_kbps)
        return ControlDecision(bitrate_target=self.target)

    def observe(self, measurement, crf, complexity):
        pass


@dataclass(frozen=True)
class GccConfig:
    """Constants of the delay-gradient/loss rate controller (not paper values)."""
    loss_decrease_threshold: float = 0.10
    loss_increase_threshold: float = 0.02
    increase_gain: float = 1.05
    delay_decrease_factor: float = 0.85
    trendline_window: int = 20
    slope_threshold_init: float = 1.0     # ms per interval
    slope_threshold_min: float = 0.06
    slope_threshold_max: float = 4.0
    threshold_gain_up: float = 0.03       # adaptation toward larger |slope|
    threshold_gain_down: float = 0.08     # adaptation toward smaller |slope|
    hysteresis: float = 0.15
    hold_intervals: int = 4
    min_kbps: float = 100.0
    max_kbps: float = 6000.0
    initial_kbps: float = 800.0


class GccLikeController:
    """Delay-trendline + loss-rate controller emitting bitrate targets.

    The slope of a least-squares fit over the recent RTT samples drives
    multiplicative decrease with hysteresis; the loss rules are multiplicative
    decrease above 10% loss and gentle growth below 2%.
    """

    def __init__(self, cfg: GccConfig | None = None):
        self.cfg = cfg or GccConfig()

    def reset(self, seed: int = 0):
        self.target = self.cfg.initial_kbps
        self.rtt_history: list[float] = []
        self.threshold = self.cfg.slope_threshold_init
        self.hold_counter = 0
        self.phase = "increase"

    def trendline_slope(self) -> float:
        """Least-squares RTT slope (ms per interval) over the trendline window."""
        n = len(self.rtt_history)
        if n < 3:
            return 0.0
        y = np.asarray(self.rtt_history[-self.cfg.trendline_window:])
        x = np.arange(len(y), dtype=np.float64)
        x -= x.mean()
        denom = float((x * x).sum())
        return float((x * (y - y.mean())).sum() / denom) if denom > 0 else 0.0

    def decide(self, measurement, complexity) -> ControlDecision:
        cfg = self.cfg
        if measurement is not None:
            self.target = self._next_target(measurement)
        self.target = min(max(self.target, cfg.min_kbps), cfg.max_kbps)
        return ControlDecision(bitrate_target=self.target)

    def _next_target(self, m) -> float:
        cfg = self.cfg
        self.rtt_history.append(m.rtt)
        slope = self.trendline_slope()
        # adapt the threshold toward the observed slope magnitude, with
        # hysteresis: overuse declared above (1+h)*threshold, cleared below (1-h)
        if abs(slope) > self.threshold:
            self.threshold += cfg.threshold_gain_up * (abs(slope) - self.threshold)
        else:
            self.threshold += cfg.threshold_gain_down * (abs(slope) - self.threshold)
        self.threshold = min(max(self.threshold, cfg.slope_threshold_min),
                             cfg.slope_threshold_max)
        target = self.target
        overuse = slope > self.threshold * (1.0 + cfg.hysteresis)
        underuse_cleared = slope < self.threshold * (1.0 - cfg.hysteresis)
        if m.loss_rate > cfg.loss_decrease_threshold:
            target *= (1.0 - 0.5 * m.loss_rate)
            self.phase = "decrease"
            self.hold_counter = cfg.hold_intervals
        elif overuse:
            target *= cfg.delay_decrease_factor
            self.phase = "hold"
            self.hold_counter = cfg.hold_intervals
        elif self.hold_counter > 0:
            self.hold_counter -= 1
            self.phase = "hold"
        elif m.loss_rate < cfg.loss_increase_threshold and underuse_cleared:
            target *= cfg.increase_gain
            self.phase = "increase"
        else:
            self.phase = "hold"
        return target

    def observe(self, measurement, crf, complexity):
        pass
