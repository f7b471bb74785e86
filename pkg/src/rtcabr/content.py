"""Per-frame content complexity: SI/TI computation and video profiles.

SI is the population standard deviation of the Sobel gradient magnitude over
interior pixels; TI is the population standard deviation of the signed frame
difference. Both follow the classical ITU-T P.910 definitions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, FrameTooSmall, ParseError, RangeError, ValidationError

MIN_FRAME_DIM = 8

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T

DEFAULT_FPS = 30
DEFAULT_GOP = 60
DEFAULT_SCENE_TI_THRESHOLD = 40.0
DEFAULT_SPATIAL_FACTOR = 2
DEFAULT_TEMPORAL_FACTOR = 2


@dataclass(frozen=True)
class RawFrame:
    width: int
    height: int
    luma: np.ndarray  # (height, width) float64, values 0..255

    @classmethod
    def from_array(cls, arr) -> "RawFrame":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatch(f"expected 2-D luma plane, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], luma=a)

    def validate(self):
        if self.width < MIN_FRAME_DIM or self.height < MIN_FRAME_DIM:
            raise FrameTooSmall(f"frame {self.width}x{self.height} below {MIN_FRAME_DIM} minimum")
        if self.luma.shape != (self.height, self.width):
            raise DimensionMismatch("luma shape does not match declared dimensions")


@dataclass(frozen=True)
class FrameRecord:
    index: int
    frame_type: str          # "I" or "P"
    si: float
    ti: float
    scene_change: bool = False


@dataclass
class VideoProfile:
    id: str
    fps: int = DEFAULT_FPS
    frames: list[FrameRecord] = field(default_factory=list)

    def validate(self):
        if len(self.frames) < self.fps * 10:
            raise ValidationError(
                f"profile {self.id}: needs >= {self.fps * 10} frames, has {len(self.frames)}")
        for i, rec in enumerate(self.frames):
            if rec.index != i:
                raise ValidationError(f"profile {self.id}: frame indices not contiguous at {i}")
        if self.frames[0].frame_type != "I" or self.frames[0].ti != 0.0:
            raise ValidationError(f"profile {self.id}: frame 0 must be type I with ti 0")

    def frame(self, index: int) -> FrameRecord:
        """Frame record at `index`, looping when the profile is shorter."""
        return self.frames[index % len(self.frames)]


def _convolve2d_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, valid region only (output trimmed by 1 pixel rim)."""
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * img[dy:dy + h - 2, dx:dx + w - 2]
    return out


def compute_si(frame: RawFrame) -> float:
    """Population stdev of the Sobel gradient magnitude over interior pixels."""
    frame.validate()
    gx = _convolve2d_valid(frame.luma, SOBEL_X)
    gy = _convolve2d_valid(frame.luma, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy)
    return float(np.std(mag))


def compute_ti(frame: RawFrame, prev: RawFrame) -> float:
    """Population stdev of the signed per-pixel difference frame - prev."""
    if frame.luma.shape != prev.luma.shape:
        raise DimensionMismatch(
            f"frame {frame.luma.shape} vs prev {prev.luma.shape}")
    return float(np.std(frame.luma - prev.luma))


def downsample(frame: RawFrame, factor: int) -> RawFrame:
    """Box-average pooling over factor x factor blocks, floor-cropping first."""
    if factor < 1:
        raise ValidationError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return frame
    h = (frame.height // factor) * factor
    w = (frame.width // factor) * factor
    if h // factor < MIN_FRAME_DIM or w // factor < MIN_FRAME_DIM:
        raise FrameTooSmall(f"{frame.width}x{frame.height} too small for factor {factor}")
    cropped = frame.luma[:h, :w]
    pooled = cropped.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return RawFrame(width=w // factor, height=h // factor, luma=pooled)


def interval_complexity(profile: VideoProfile, start: int, end: int
                        ) -> tuple[float, float, int]:
    """(avg_si, avg_ti, has_iframe) over frame indices [start, end).

    Indices past the profile end wrap (the profile loops during long sessions).
    """
    if end <= start or start < 0:
        raise RangeError(f"bad frame range [{start}, {end})")
    recs = [profile.frame(i) for i in range(start, end)]
    avg_si = sum(r.si for r in recs) / len(recs)
    avg_ti = sum(r.ti for r in recs) / len(recs)
    has_i = int(any(r.frame_type == "I" for r in recs))
    return avg_si, avg_ti, has_i


def profile_from_frames(frames, fps: int = DEFAULT_FPS,
                        gop_length: int = DEFAULT_GOP,
                        scene_ti_threshold: float = DEFAULT_SCENE_TI_THRESHOLD,
                        spatial_factor: int = DEFAULT_SPATIAL_FACTOR,
                        temporal_factor: int = DEFAULT_TEMPORAL_FACTOR,
                        profile_id: str = "frames",
                        validate: bool = True) -> VideoProfile:
    """Build a profile from raw frames.

    SI/TI are computed on spatially downsampled frames; TI compares against the
    frame `temporal_factor` steps back (temporal downsampling), with the most
    recent available frame used for the first few frames.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValidationError("need at least 2 frames")
    small = [downsample(f, spatial_factor) for f in frames]
    records = []
    for k, f in enumerate(small):
        si = compute_si(f)
        if k == 0:
            ti = 0.0
        else:
            ref = small[max(0, k - temporal_factor)]
            if ref is small[k]:
                ref = small[k - 1]
            ti = compute_ti(f, ref)
        scene = k > 0 and ti > scene_ti_threshold
        ftype = "I" if (k % gop_length == 0 or scene) else "P"
        records.append(FrameRecord(index=k, frame_type=ftype, si=si, ti=ti, scene_change=scene))
    prof = VideoProfile(id=profile_id, fps=fps, frames=records)
    if validate:
        prof.validate()
    return prof


# --- profile CSV I/O ---------------------------------------------------------

def load_profile_csv(path, fps: int = DEFAULT_FPS, profile_id: str | None = None) -> VideoProfile:
    """Profile CSV: header `index,frame_type,si,ti,scene_change`."""
    records = []
    with open(path, encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "si" not in reader.fieldnames:
            raise ParseError(f"{path}: missing profile CSV header")
        for lineno, row in enumerate(reader, 2):
            try:
                records.append(FrameRecord(
                    index=int(row["index"]),
                    frame_type=row["frame_type"].strip(),
                    si=float(row["si"]),
                    ti=float(row["ti"]),
                    scene_change=row.get("scene_change", "0").strip().lower() in ("1", "true"),
                ))
            except (KeyError, ValueError) as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
    prof = VideoProfile(id=profile_id or str(path), fps=fps, frames=records)
    prof.validate()
    return prof


def save_profile_csv(profile: VideoProfile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("index,frame_type,si,ti,scene_change\n")
        for r in profile.frames:
            f.write(f"{r.index},{r.frame_type},{r.si:.6g},{r.ti:.6g},{int(r.scene_change)}\n")


def synthetic_profile(seed: int = 0, duration_s: float = 60.0, fps: int = DEFAULT_FPS,
                      gop_length: int = DEFAULT_GOP,
                      si_range: tuple[float, float] = (20.0, 100.0),
                      ti_range: tuple[float, float] = (5.0, 60.0),
                      profile_id: str | None = None) -> VideoProfile:
    """Random-walk SI/TI profile for desk-scale experiments (no pixel input)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fps))
    si_lo, si_hi = si_range
    ti_lo, ti_hi = ti_range
    si = rng.uniform(si_lo, si_hi)
    ti = rng.uniform(ti_lo, ti_hi)
    records = []
    for k in range(n):
        si = float(np.clip(si + rng.normal(0, (si_hi - si_lo) * 0.02), si_lo, si_hi))
        scene = k > 0 and rng.random() < 0.004
        if scene:
            ti_val = ti_hi * rng.uniform(1.0, 1.5)
            si = rng.uniform(si_lo, si_hi)
        else:
            ti = float(np.clip(ti + rng.normal(0, (ti_hi - ti_lo) * 0.03), ti_lo, ti_hi))
            ti_val = ti
        if k == 0:
            ti_val = 0.0
        ftype = "I" if (k % gop_length == 0 or scene) else "P"
        records.append(FrameRecord(index=k, frame_type=ftype, si=si, ti=ti_val,
                                   scene_change=scene))
    prof = VideoProfile(id=profile_id or f"synthetic-{seed}", fps=fps, frames=records)
    prof.validate()
    return prof


def read_y_frames(path, width: int, height: int) -> list[RawFrame]:
    """Read a planar 8-bit Y-only raw file as a list of frames."""
    data = np.fromfile(str(path), dtype=np.uint8)
    frame_px = width * height
    if frame_px == 0 or len(data) % frame_px != 0:
        raise ParseError(
            f"{path}: size {len(data)} not a multiple of {width}x{height}")
    n = len(data) // frame_px
    return [RawFrame(width=width, height=height,
                     luma=data[i * frame_px:(i + 1) * frame_px]
                     .reshape(height, width).astype(np.float64))
            for i in range(n)]
