"""Frame-size and quality model for a CRF-controlled encoder.

Size follows the constant-quality rule of thumb: +6 CRF halves the bitrate.
I-frame size is driven by spatial complexity, P-frame size by temporal
complexity with a small spatial term. Calibration constants put a
(si=60, ti=30) profile at ~1.5 Mbps for CRF 23 at 30 fps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .content import FrameRecord
from .errors import CrfOutOfRange, InvalidDelta, ValidationError

CRF_DELTAS = (+8, +4, +2, 0, -1, -2, -4)


@dataclass(frozen=True)
class CodecConfig:
    crf_min: int = 10
    crf_max: int = 51
    crf_ref: int = 28
    size_halving_step: float = 6.0
    k_i: float = 212.7       # bytes per SI unit, I frames
    k_p: float = 65.4        # bytes per TI unit, P frames
    iframe_floor: float = 600.0
    pframe_floor: float = 200.0

    def __post_init__(self):
        if not self.crf_min < self.crf_ref < self.crf_max:
            raise ValidationError("need crf_min < crf_ref < crf_max")
        if self.size_halving_step <= 0:
            raise ValidationError("size_halving_step must be > 0")
        if not self.k_i > self.k_p > 0:
            raise ValidationError("need k_i > k_p > 0")

    def check_crf(self, crf: float):
        if not self.crf_min <= crf <= self.crf_max:
            raise CrfOutOfRange(f"crf {crf} outside [{self.crf_min}, {self.crf_max}]")


def frame_size(cfg: CodecConfig, rec: FrameRecord, crf: float) -> int:
    """Compressed frame size in bytes."""
    cfg.check_crf(crf)
    if rec.frame_type == "I":
        base = cfg.k_i * rec.si + cfg.iframe_floor
    else:
        base = cfg.k_p * (rec.ti + 0.3 * rec.si) + cfg.pframe_floor
    return int(round(base * 2.0 ** ((cfg.crf_ref - crf) / cfg.size_halving_step)))


def quality_proxy(cfg: CodecConfig, crf: float) -> float:
    """q = crf_max - crf."""
    cfg.check_crf(crf)
    return float(cfg.crf_max - crf)


def apply_delta_crf(crf: int, delta: int, cfg: CodecConfig) -> int:
    """Apply an action-set delta, clamped to [crf_min, crf_max]."""
    if delta not in CRF_DELTAS:
        raise InvalidDelta(f"delta {delta} not in {CRF_DELTAS}")
    return max(cfg.crf_min, min(cfg.crf_max, crf + delta))


@dataclass
class LaggedEncoderState:
    """First-order lag of a legacy target-bitrate encoder."""
    actual_bitrate: float     # kbps
    time_constant: float = 1.0

    def step(self, target: float, dt: float) -> float:
        return lagged_target_step(self, target, dt)


def lagged_target_step(state: LaggedEncoderState, target: float, dt: float) -> float:
    """Move the actual bitrate toward the target with an exponential lag."""
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    if target < 0:
        raise ValidationError(f"target must be >= 0, got {target}")
    alpha = 1.0 - math.exp(-dt / state.time_constant)
    state.actual_bitrate += (target - state.actual_bitrate) * alpha
    return state.actual_bitrate


def window_bitrate_kbps(cfg: CodecConfig, window: list[FrameRecord], crf: float,
                        fps: float) -> float:
    """Predicted sending bitrate for a window of frames at a fixed CRF."""
    total_bytes = sum(frame_size(cfg, rec, crf) for rec in window)
    duration = len(window) / fps
    return total_bytes * 8.0 / duration / 1000.0


def crf_for_target_bitrate(cfg: CodecConfig, window: list[FrameRecord],
                           target: float, fps: float) -> int:
    """Integer CRF whose predicted window bitrate is closest to the target.

    Ties break toward the larger (safer) CRF. Size is monotone decreasing in
    CRF, so a single pass suffices.
    """
    if not window:
        raise ValidationError("empty frame window")
    if target <= 0:
        raise ValidationError(f"target must be > 0, got {target}")
    best_crf = cfg.crf_max
    best_err = float("inf")
    for crf in range(cfg.crf_min, cfg.crf_max + 1):
        err = abs(window_bitrate_kbps(cfg, window, crf, fps) - target)
        if err < best_err or (err == best_err and crf > best_crf):
            best_err = err
            best_crf = crf
    return best_crf
