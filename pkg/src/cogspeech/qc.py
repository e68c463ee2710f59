"""Recording-level quality control.

Four gates, all strict inequalities (a value exactly at its threshold
fails): duration > 15 s, RMS > -55 dBFS, clipping ratio < 1.5%, and
reference-free SNR > 10 dB. Metric combinations that look mutually
inconsistent (e.g. lots of speech activity but poor SNR) are routed to
manual review instead of a hard pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import RMS_FLOOR_DBFS, Signal, _frame_signal
from .errors import ValidationError

# Absolute frame-energy floor used when the signal has no level contrast
# to threshold against (continuous tone, pure silence).
ACTIVITY_FLOOR_DBFS = -60.0
_HOMOGENEOUS_SPREAD_DB = 3.0


def rms_dbfs(x: Signal) -> float:
    """Full-scale-referenced RMS in dB; silence capped at -120."""
    if len(x) == 0:
        raise ValidationError("empty signal")
    ms = float(np.mean(np.square(x.samples)))
    if ms <= 0.0:
        return RMS_FLOOR_DBFS
    return max(10.0 * math.log10(ms), RMS_FLOOR_DBFS)


def clipping_ratio(x: Signal, clip_level: float = 0.999) -> float:
    """Fraction of samples at or beyond clip_level of full scale."""
    if len(x) == 0:
        raise ValidationError("empty signal")
    return float(np.count_nonzero(np.abs(x.samples) >= clip_level)) / len(x)


def _frame_rms_db(x: Signal, frame_s: float, hop_s: float) -> np.ndarray:
    frame_len = int(round(frame_s * x.sample_rate))
    hop = int(round(hop_s * x.sample_rate))
    frames = _frame_signal(x.samples, frame_len, hop)
    ms = np.mean(np.square(frames), axis=1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(ms)
    return np.maximum(db, RMS_FLOOR_DBFS)


def estimate_snr_quantile(x: Signal, frame_s: float = 0.025, hop_s: float = 0.010,
                          speech_q: float = 0.95, noise_q: float = 0.15) -> float:
    """Reference-free SNR: spread between the speech_q and noise_q
    quantiles of framewise RMS in dB."""
    if x.duration_s < 1.0:
        raise ValidationError(f"need at least 1 s for SNR estimation, got "
                              f"{x.duration_s:.3f} s")
    db = _frame_rms_db(x, frame_s, hop_s)
    return float(np.quantile(db, speech_q) - np.quantile(db, noise_q))


def speech_activity_ratio(x: Signal, frame_s: float = 0.025, hop_s: float = 0.010,
                          noise_q: float = 0.15, margin_db: float = 6.0) -> float:
    """Fraction of frames whose RMS clears the noise quantile by margin_db.

    Level-homogeneous signals (quantile spread under 3 dB) have no noise
    floor to anchor the threshold, so they fall back to an absolute
    -60 dBFS floor: a continuous tone counts as fully active, silence as
    fully inactive.
    """
    if x.duration_s < 1.0:
        raise ValidationError(f"need at least 1 s for activity estimation, got "
                              f"{x.duration_s:.3f} s")
    db = _frame_rms_db(x, frame_s, hop_s)
    lo = float(np.quantile(db, noise_q))
    hi = float(np.quantile(db, 0.95))
    if hi - lo < _HOMOGENEOUS_SPREAD_DB:
        threshold = ACTIVITY_FLOOR_DBFS
    else:
        threshold = lo + margin_db
    return float(np.mean(db > threshold))


@dataclass(frozen=True)
class QcThresholds:
    min_duration_s: float = 15.0
    min_rms_dbfs: float = -55.0
    max_clip_ratio: float = 0.015
    min_snr_db: float = 10.0
    clip_level: float = 0.999

    def __post_init__(self):
        for name in ("min_duration_s", "min_rms_dbfs", "max_clip_ratio",
                     "min_snr_db", "clip_level"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not (0.0 <= self.max_clip_ratio <= 1.0):
            raise ValidationError("max_clip_ratio must be in [0, 1]")


@dataclass(frozen=True)
class QcMetrics:
    duration_s: float
    rms_dbfs: float
    clip_ratio: float
    snr_db: float
    activity_ratio: float


@dataclass(frozen=True)
class QcReport:
    metrics: QcMetrics
    flags: dict  # metric name -> bool
    overall: str  # "pass" | "fail" | "review"
    review_reasons: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "duration_s": self.metrics.duration_s,
            "rms_dbfs": self.metrics.rms_dbfs,
            "clip_ratio": self.metrics.clip_ratio,
            "snr_db": self.metrics.snr_db,
            "activity_ratio": self.metrics.activity_ratio,
            "flags": dict(self.flags),
            "overall": self.overall,
            "review_reasons": list(self.review_reasons),
        }


def _default_review_rules():
    return (
        ("high speech activity ratio with low SNR",
         lambda m, t: m.activity_ratio > 0.5 and m.snr_db <= t.min_snr_db),
        ("high SNR with very low energy",
         lambda m, t: m.snr_db > 25.0 and m.rms_dbfs <= t.min_rms_dbfs),
    )


def gate_from_metrics(m: QcMetrics, t: QcThresholds | None = None,
                      review_rules=None) -> QcReport:
    """Decision layer: a pure function of the measured metrics.

    Review takes precedence over fail; a report is always produced.
    """
    if t is None:
        t = QcThresholds()
    if review_rules is None:
        review_rules = _default_review_rules()
    flags = {
        "duration": m.duration_s > t.min_duration_s,
        "rms": m.rms_dbfs > t.min_rms_dbfs,
        "clipping": m.clip_ratio < t.max_clip_ratio,
        "snr": m.snr_db > t.min_snr_db,
    }
    reasons = tuple(reason for reason, pred in review_rules if pred(m, t))
    if reasons:
        overall = "review"
    elif all(flags.values()):
        overall = "pass"
    else:
        overall = "fail"
    return QcReport(metrics=m, flags=flags, overall=overall,
                    review_reasons=reasons)


def measure_metrics(x: Signal, t: QcThresholds | None = None,
                    rms_scope: str = "full") -> QcMetrics:
    """Compute the gate inputs. Signals under 1 s cannot support the
    frame-quantile estimates; those metrics come back NaN and fail any
    strict comparison downstream."""
    if t is None:
        t = QcThresholds()
    if rms_scope not in ("full", "active"):
        raise ValidationError(f"rms_scope must be 'full' or 'active', got "
                              f"{rms_scope!r}")
    duration = x.duration_s
    level = rms_dbfs(x) if len(x) else RMS_FLOOR_DBFS
    clip = clipping_ratio(x, t.clip_level) if len(x) else 0.0
    if duration >= 1.0:
        snr = estimate_snr_quantile(x)
        activity = speech_activity_ratio(x)
        if rms_scope == "active":
            level = _active_rms_dbfs(x)
    else:
        snr = float("nan")
        activity = float("nan")
    return QcMetrics(duration_s=duration, rms_dbfs=level, clip_ratio=clip,
                     snr_db=snr, activity_ratio=activity)


def _active_rms_dbfs(x: Signal, frame_s: float = 0.025, hop_s: float = 0.010,
                     noise_q: float = 0.15, margin_db: float = 6.0) -> float:
    """RMS over VAD-active frames only (optional alternative gate input)."""
    db = _frame_rms_db(x, frame_s, hop_s)
    lo = float(np.quantile(db, noise_q))
    hi = float(np.quantile(db, 0.95))
    threshold = ACTIVITY_FLOOR_DBFS if hi - lo < _HOMOGENEOUS_SPREAD_DB \
        else lo + margin_db
    active = db > threshold
    if not np.any(active):
        return RMS_FLOOR_DBFS
    # mean power over active frames, back to dB
    return float(10.0 * np.log10(np.mean(10.0 ** (db[active] / 10.0))))


def qc_gate(x: Signal, t: QcThresholds | None = None,
            rms_scope: str = "full") -> QcReport:
    """Measure then gate. Never raises on content; bad signals fail."""
    return gate_from_metrics(measure_metrics(x, t, rms_scope), t)
