"""Acoustic feature extraction and embedding ingestion.

Hand-crafted features form three sets: prosodic features taken from the
prosody-preserved stream, voice-quality features from the concatenated
stream, and their union. Names carry an `egx.` prefix: the inventory is
inspired by the extended Geneva minimalistic parameter set but is a
curated subset, not the certified 88-parameter vector.

Functionals are arithmetic mean and coefficient of variation with the
population-SD convention; F0 statistics live on the semitone scale
relative to 27.5 Hz; dB-scaled level contours report SD instead of CoV
so a pure gain shifts the mean by that many dB and nothing else.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .dsp import Signal, _frame_signal
from .errors import InputError, ValidationError

FRAME_S = 0.025
HOP_S = 0.010
F0_WIN_S = 0.040
SEMITONE_REF_HZ = 27.5
VOICING_THRESHOLD = 0.45
ENERGY_FLOOR_DBFS = -60.0
HNR_MIN_DB, HNR_MAX_DB = -20.0, 40.0

SET_TAGS = ("EG_PROSODY", "EG_VQUAL", "EG_ALL", "EMBEDDING")

EG_PROSODY_NAMES = (
    "egx.f0_semitone.mean", "egx.f0_semitone.cov",
    "egx.rms_db.mean", "egx.rms_db.sd",
    "egx.voiced.ratio", "egx.voiced_run.rate_per_s",
    "egx.pause.count", "egx.pause.mean_s", "egx.pause.max_s",
    "egx.pause.total_ratio",
)

EG_VQUAL_NAMES = (
    "egx.jitter.mean", "egx.jitter.cov",
    "egx.shimmer.mean", "egx.shimmer.cov",
    "egx.hnr_db.mean", "egx.hnr_db.cov",
    "egx.slope_v_0_500.mean", "egx.slope_v_0_500.cov",
    "egx.slope_uv_0_500.mean", "egx.slope_uv_0_500.cov",
    "egx.slope_v_500_1500.mean", "egx.slope_v_500_1500.cov",
    "egx.slope_uv_500_1500.mean", "egx.slope_uv_500_1500.cov",
    "egx.f1_hz.mean", "egx.f1_hz.cov",
    "egx.f1_bw_hz.mean", "egx.f1_bw_hz.cov",
    "egx.f2_hz.mean", "egx.f2_hz.cov",
    "egx.f2_bw_hz.mean", "egx.f2_bw_hz.cov",
)

EG_ALL_NAMES = EG_PROSODY_NAMES + EG_VQUAL_NAMES

# contours whose second functional is plain SD (dB-scaled levels)
_SD_ONLY = {"rms_db"}


@dataclass(frozen=True)
class LldContour:
    """Per-frame descriptor track; mask marks frames where the value is
    meaningful (voiced, enough pulses, stable fit, ...)."""

    name: str
    values: np.ndarray
    voiced_mask: np.ndarray
    frame_s: float = HOP_S

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.voiced_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ValidationError(f"contour {self.name!r}: values {values.shape} "
                                  f"vs mask {mask.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "voiced_mask", mask)

    def valid_values(self) -> np.ndarray:
        return self.values[self.voiced_mask]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FeatureVector:
    set_tag: str
    values: dict  # name -> float, insertion order is canonical
    absent: tuple[str, ...] = ()

    def __post_init__(self):
        if self.set_tag not in SET_TAGS:
            raise ValidationError(f"unknown set tag {self.set_tag!r}")
        for name, v in self.values.items():
            if not math.isfinite(v):
                raise ValidationError(f"non-finite feature {name!r}: {v}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.values)

    def array(self) -> np.ndarray:
        return np.array(list(self.values.values()), dtype=np.float64)


def _frames_and_rms(x: Signal, win_s: float, hop_s: float):
    win = int(round(win_s * x.sample_rate))
    hop = int(round(hop_s * x.sample_rate))
    if len(x) < win:
        return np.zeros((0, win)), np.zeros(0)
    frames = _frame_signal(x.samples, win, hop)
    ms = np.mean(np.square(frames), axis=1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(ms)
    return frames, np.maximum(db, -120.0)


def _normalized_acf(frames: np.ndarray, lag_lo: int, lag_hi: int) -> np.ndarray:
    """r[f, tau] = acf / sqrt(leading * trailing energy), per frame."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, :n]
    csum = np.cumsum(np.square(frames), axis=1)
    total = csum[:, -1]
    taus = np.arange(lag_lo, lag_hi + 1)
    e_lead = csum[:, n - 1 - taus]
    e_trail = total[:, None] - csum[:, taus - 1]
    denom = np.sqrt(np.maximum(e_lead * e_trail, 1e-300))
    return acf[:, taus] / denom


def track_f0(x: Signal, fmin: float = 60.0, fmax: float = 400.0,
             win_s: float = F0_WIN_S, hop_s: float = HOP_S,
             voicing_threshold: float = VOICING_THRESHOLD,
             energy_floor_dbfs: float = ENERGY_FLOOR_DBFS) -> LldContour:
    """Fundamental frequency by normalized autocorrelation.

    Candidate peaks within 90% of the best are resolved toward the
    smallest lag (halving guard), then refined by parabolic
    interpolation. Frames below the energy floor or peak-clarity
    threshold are unvoiced.
    """
    if x.sample_rate < 8000:
        raise ValidationError(f"need fs >= 8 kHz, got {x.sample_rate}")
    fs = x.sample_rate
    frames, frame_db = _frames_and_rms(x, win_s, hop_s)
    nf = frames.shape[0]
    if nf == 0:
        return LldContour("f0", np.zeros(0), np.zeros(0, dtype=bool))
    frames = frames - frames.mean(axis=1, keepdims=True)
    lag_lo = max(2, int(math.floor(fs / fmax)))
    lag_hi = min(frames.shape[1] - 2, int(math.ceil(fs / fmin)))
    if lag_hi <= lag_lo:
        raise ValidationError(f"window too short for fmin {fmin} Hz")
    r = _normalized_acf(frames, lag_lo - 1, lag_hi + 1)  # pad for interpolation

    values = np.zeros(nf)
    voiced = np.zeros(nf, dtype=bool)
    for i in range(nf):
        if frame_db[i] <= energy_floor_dbfs:
            continue
        ri = r[i]
        inner = ri[1:-1]  # lags lag_lo..lag_hi
        peaks = np.flatnonzero((inner > ri[:-2]) & (inner >= ri[2:]))
        if peaks.size == 0:
            continue
        best = float(inner[peaks].max())
        if best < voicing_threshold:
            continue
        cand = peaks[inner[peaks] >= 0.9 * best] if best > 0 else peaks
        p = int(cand.min())
        # parabolic refinement around the chosen peak
        a, b, c = ri[p], ri[p + 1], ri[p + 2]
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
        lag = (lag_lo + p) + float(np.clip(delta, -0.5, 0.5))
        f0 = fs / lag
        if fmin * 0.9 <= f0 <= fmax * 1.1:
            values[i] = f0
            voiced[i] = True
    return LldContour("f0", values, voiced, frame_s=hop_s)


def _pulse_marks(samples: np.ndarray, fs: int, f0c: LldContour,
                 win_s: float, hop_s: float):
    """Peak picking at roughly one pitch period spacing inside voiced
    runs. Returns per-run lists of mark sample indices."""
    hop = int(round(hop_s * fs))
    win = int(round(win_s * fs))
    mask = f0c.voiced_mask
    runs = []
    i = 0
    while i < len(mask):
        if not mask[i]:
            i += 1
            continue
        j = i
        while j < len(mask) and mask[j]:
            j += 1
        run_f0 = f0c.values[i:j]
        run_f0 = run_f0[run_f0 > 0]
        if run_f0.size:
            t0 = fs / float(np.median(run_f0))
            a = i * hop
            b = min(len(samples), (j - 1) * hop + win)
            marks = []
            lo, hi = a, min(b, a + int(1.3 * t0) + 1)
            while hi - lo >= 2:
                m = lo + int(np.argmax(samples[lo:hi]))
                marks.append(m)
                lo = m + int(0.7 * t0)
                hi = min(b, m + int(1.3 * t0) + 1)
            if len(marks) >= 3:
                m_arr = np.array(marks)
                # a truncated search window at a run edge can land on a
                # decaying tail instead of a pulse; drop weak edge marks
                amps = np.abs(samples[m_arr])
                med = float(np.median(amps))
                lo_i, hi_i = 0, len(m_arr)
                while hi_i > lo_i and amps[hi_i - 1] < 0.3 * med:
                    hi_i -= 1
                while hi_i > lo_i and amps[lo_i] < 0.3 * med:
                    lo_i += 1
                if hi_i - lo_i >= 3:
                    runs.append(m_arr[lo_i:hi_i])
        i = j
    return runs


def jitter_shimmer_hnr(x: Signal, f0c: LldContour, win_s: float = F0_WIN_S,
                       hop_s: float = HOP_S, stat_win_s: float = 0.060
                       ) -> tuple[LldContour, LldContour, LldContour]:
    """Local jitter, local shimmer, and autocorrelation HNR per frame.

    Jitter and shimmer need pulse marks: within each frame's window the
    mean absolute difference of adjacent periods (amplitudes) over their
    mean. HNR needs only the frame autocorrelation peak and is defined
    wherever the frame has energy, voiced or not.
    """
    fs = x.sample_rate
    frames, frame_db = _frames_and_rms(x, win_s, hop_s)
    nf = min(frames.shape[0], len(f0c))
    if nf == 0 or not np.any(f0c.voiced_mask[:nf]):
        empty = np.zeros(0)
        none = np.zeros(0, dtype=bool)
        return (LldContour("jitter", empty, none),
                LldContour("shimmer", empty, none),
                LldContour("hnr_db", empty, none))
    frames = frames[:nf] - frames[:nf].mean(axis=1, keepdims=True)

    # pulse statistics pooled across runs, tagged with time for windowing
    per_t, per_val = [], []          # periods: midpoint time, duration
    dif_t, dif_val = [], []          # period diffs: junction time, |dT|
    amp_t, amp_val = [], []          # amplitudes at marks
    adf_t, adf_val = [], []          # amplitude diffs
    for marks in _pulse_marks(x.samples, fs, f0c, win_s, hop_s):
        t = marks / fs
        periods = np.diff(t)
        per_t.extend((t[:-1] + t[1:]) / 2.0)
        per_val.extend(periods)
        dif_t.extend(t[1:-1])
        dif_val.extend(np.abs(np.diff(periods)))
        amps = np.abs(x.samples[marks])
        amp_t.extend(t)
        amp_val.extend(amps)
        adf_t.extend(t[1:])
        adf_val.extend(np.abs(np.diff(amps)))
    per_t, per_val = np.array(per_t), np.array(per_val)
    dif_t, dif_val = np.array(dif_t), np.array(dif_val)
    amp_t, amp_val = np.array(amp_t), np.array(amp_val)
    adf_t, adf_val = np.array(adf_t), np.array(adf_val)

    hop = int(round(hop_s * fs))
    win = int(round(win_s * fs))
    centers = (np.arange(nf) * hop + win / 2.0) / fs
    half = stat_win_s / 2.0

    jit = np.zeros(nf)
    shim = np.zeros(nf)
    jit_mask = np.zeros(nf, dtype=bool)
    shim_mask = np.zeros(nf, dtype=bool)
    for i in range(nf):
        if not f0c.voiced_mask[i]:
            continue
        lo, hi = centers[i] - half, centers[i] + half
        psel = (per_t >= lo) & (per_t <= hi)
        dsel = (dif_t >= lo) & (dif_t <= hi)
        if psel.sum() >= 3 and dsel.sum() >= 2:
            jit[i] = float(np.mean(dif_val[dsel]) / np.mean(per_val[psel]))
            jit_mask[i] = True
        asel = (amp_t >= lo) & (amp_t <= hi)
        adsel = (adf_t >= lo) & (adf_t <= hi)
        if asel.sum() >= 3 and adsel.sum() >= 2 and np.mean(amp_val[asel]) > 0:
            shim[i] = float(np.mean(adf_val[adsel]) / np.mean(amp_val[asel]))
            shim_mask[i] = True

    # HNR from the best normalized-autocorrelation peak in the pitch range
    lag_lo = max(2, int(math.floor(fs / 400.0)))
    lag_hi = min(win - 2, int(math.ceil(fs / 60.0)))
    r = _normalized_acf(frames, lag_lo, lag_hi)
    hnr = np.full(nf, HNR_MIN_DB)
    hnr_mask = frame_db[:nf] > ENERGY_FLOOR_DBFS
    for i in range(nf):
        if not hnr_mask[i]:
            continue
        if f0c.voiced_mask[i] and f0c.values[i] > 0:
            lag = int(round(fs / f0c.values[i]))
            a = max(0, lag - 2 - lag_lo)
            b = min(r.shape[1], lag + 3 - lag_lo)
            peak = float(r[i, a:b].max()) if b > a else float(r[i].max())
        else:
            peak = float(r[i].max())
        peak = min(max(peak, 1e-12), 1.0 - 1e-12)
        if peak <= 0:
            hnr[i] = HNR_MIN_DB
        else:
            hnr[i] = float(np.clip(10.0 * math.log10(peak / (1.0 - peak)),
                                   HNR_MIN_DB, HNR_MAX_DB))
    return (LldContour("jitter", jit, jit_mask, frame_s=hop_s),
            LldContour("shimmer", shim, shim_mask, frame_s=hop_s),
            LldContour("hnr_db", hnr, hnr_mask, frame_s=hop_s))


def spectral_slopes(x: Signal, f0c: LldContour,
                    bands=((0.0, 500.0), (500.0, 1500.0)),
                    frame_s: float = FRAME_S, hop_s: float = HOP_S
                    ) -> list[LldContour]:
    """Per-frame regression slope of the dB spectrum vs frequency (kHz)
    within each band, as separate voiced and unvoiced contours."""
    fs = x.sample_rate
    frames, frame_db = _frames_and_rms(x, frame_s, hop_s)
    nf = frames.shape[0]
    win = frames.shape[1] if nf else int(round(frame_s * fs))
    freqs = np.fft.rfftfreq(win, 1.0 / fs)
    windowed = frames * np.hanning(win) if nf else frames
    spec_db = 20.0 * np.log10(np.abs(np.fft.rfft(windowed, axis=1)) + 1e-12)

    out = []
    n_align = min(nf, len(f0c)) if len(f0c) else nf
    voiced = np.zeros(nf, dtype=bool)
    voiced[:n_align] = f0c.voiced_mask[:n_align] if len(f0c) else False
    energetic = frame_db > ENERGY_FLOOR_DBFS
    for lo, hi in bands:
        sel = (freqs > lo) & (freqs <= hi)
        if sel.sum() < 2:
            raise ValidationError(f"band ({lo}, {hi}] Hz has "
                                  f"{int(sel.sum())} bins at fs={fs}; need >= 2")
        f_khz = freqs[sel] / 1000.0
        fc = f_khz - f_khz.mean()
        denom = float(np.sum(fc * fc))
        y = spec_db[:, sel] if nf else np.zeros((0, sel.sum()))
        slopes = (y - y.mean(axis=1, keepdims=True)) @ fc / denom if nf \
            else np.zeros(0)
        tag = f"{int(lo)}_{int(hi)}"
        out.append(LldContour(f"slope_v_{tag}", slopes, energetic & voiced,
                              frame_s=hop_s))
        out.append(LldContour(f"slope_uv_{tag}", slopes, energetic & ~voiced,
                              frame_s=hop_s))
    return out


def _levinson(rxx: np.ndarray, order: int):
    """Levinson-Durbin; None when the fit is unstable or degenerate."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = rxx[0]
    if err <= 0:
        return None
    for i in range(1, order + 1):
        acc = rxx[i] + np.dot(a[1:i], rxx[i - 1:0:-1])
        k = -acc / err
        if not np.isfinite(k) or abs(k) >= 1.0:
            return None
        a[1:i + 1] = a[1:i + 1] + k * a[i - 1::-1][:i]
        err *= (1.0 - k * k)
        if err <= 0:
            return None
    return a


F1_RANGE_HZ = (200.0, 1000.0)
F2_RANGE_HZ = (800.0, 2800.0)
MAX_FORMANT_BW_HZ = 400.0


def formant_bandwidths(x: Signal, f0c: LldContour, order: int | None = None,
                       frame_s: float = FRAME_S, hop_s: float = HOP_S
                       ) -> list[LldContour]:
    """F1/F2 center frequencies and bandwidths from LPC pole angles on
    voiced frames. Unstable frames are skipped (mask False)."""
    if x.sample_rate < 8000:
        raise ValidationError(f"need fs >= 8 kHz, got {x.sample_rate}")
    fs = x.sample_rate
    if order is None:
        order = fs // 1000 + 2
    frames, _ = _frames_and_rms(x, frame_s, hop_s)
    nf = min(frames.shape[0], len(f0c))
    window = np.hamming(frames.shape[1]) if nf else None

    names = ("f1_hz", "f1_bw_hz", "f2_hz", "f2_bw_hz")
    values = {n: np.zeros(nf) for n in names}
    masks = {n: np.zeros(nf, dtype=bool) for n in names}
    for i in range(nf):
        if not f0c.voiced_mask[i]:
            continue
        w = frames[i] * window
        full = np.correlate(w, w, mode="full")
        rxx = full[len(w) - 1:len(w) + order]
        a = _levinson(rxx, order)
        if a is None:
            continue
        roots = np.roots(a)
        roots = roots[(roots.imag > 1e-8) & (np.abs(roots) < 1.0)]
        if roots.size == 0:
            continue
        freqs = np.angle(roots) * fs / (2.0 * np.pi)
        bws = -(fs / np.pi) * np.log(np.abs(roots))
        idx = np.argsort(freqs)
        freqs, bws = freqs[idx], bws[idx]
        f1 = f2 = None
        for f, bw in zip(freqs, bws):
            # broad poles model source spectrum shape, not resonances
            if bw > MAX_FORMANT_BW_HZ:
                continue
            if f1 is None and F1_RANGE_HZ[0] <= f <= F1_RANGE_HZ[1]:
                f1 = (f, bw)
                continue
            if f2 is None and F2_RANGE_HZ[0] <= f <= F2_RANGE_HZ[1]:
                if f1 is None or f > f1[0]:
                    f2 = (f, bw)
        if f1 is not None:
            values["f1_hz"][i], values["f1_bw_hz"][i] = f1
            masks["f1_hz"][i] = masks["f1_bw_hz"][i] = True
        if f2 is not None:
            values["f2_hz"][i], values["f2_bw_hz"][i] = f2
            masks["f2_hz"][i] = masks["f2_bw_hz"][i] = True
    return [LldContour(n, values[n], masks[n], frame_s=hop_s) for n in names]


def _population_sd(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v - np.mean(v)))))


def semitones(hz, ref_hz: float = SEMITONE_REF_HZ) -> np.ndarray:
    hz = np.asarray(hz, dtype=np.float64)
    return 12.0 * np.log2(hz / ref_hz)


def apply_functionals(contours, set_tag: str = "EG_ALL") -> FeatureVector:
    """Mean and CoV (population SD / |mean|; SD alone when the mean is
    ~0 or for dB-level contours) per contour over its valid frames.

    The f0 contour is renamed f0_semitone and converted before the
    statistics. Contours with no valid frames contribute no features and
    are listed in .absent.
    """
    contours = list(contours)
    if not contours:
        raise ValidationError("need at least one contour")
    values: dict = {}
    absent = []
    for c in contours:
        v = c.valid_values()
        base = c.name
        if base == "f0":
            base = "f0_semitone"
            v = semitones(v[v > 0])
        if v.size == 0:
            absent.append(f"egx.{base}.mean")
            second = "sd" if base in _SD_ONLY else "cov"
            absent.append(f"egx.{base}.{second}")
            continue
        mean = float(np.mean(v))
        sd = _population_sd(v)
        values[f"egx.{base}.mean"] = mean
        if base in _SD_ONLY:
            values[f"egx.{base}.sd"] = sd
        else:
            values[f"egx.{base}.cov"] = sd / abs(mean) if abs(mean) > 1e-8 else sd
    return FeatureVector(set_tag=set_tag, values=values, absent=tuple(absent))


def _pause_stats(x: Signal, frame_s: float = FRAME_S, hop_s: float = HOP_S,
                 floor_dbfs: float = ENERGY_FLOOR_DBFS,
                 min_pause_s: float = 0.2) -> dict:
    """Silence-run statistics over the (temporally intact) stream."""
    _, frame_db = _frames_and_rms(x, frame_s, hop_s)
    silent = frame_db <= floor_dbfs
    durations = []
    i = 0
    while i < len(silent):
        if not silent[i]:
            i += 1
            continue
        j = i
        while j < len(silent) and silent[j]:
            j += 1
        dur = (j - i) * hop_s + (frame_s - hop_s)
        if dur >= min_pause_s:
            durations.append(dur)
        i = j
    total = x.duration_s
    return {
        "egx.pause.count": float(len(durations)),
        "egx.pause.mean_s": float(np.mean(durations)) if durations else 0.0,
        "egx.pause.max_s": float(max(durations)) if durations else 0.0,
        "egx.pause.total_ratio": float(sum(durations) / total) if total > 0 else 0.0,
    }


def _voicing_stats(f0c: LldContour) -> dict:
    mask = f0c.voiced_mask
    n = len(mask)
    if n == 0:
        return {"egx.voiced.ratio": 0.0, "egx.voiced_run.rate_per_s": 0.0}
    runs = int(np.count_nonzero(np.diff(np.concatenate([[0], mask.astype(np.int8)]))
                                == 1))
    duration = n * f0c.frame_s
    return {
        "egx.voiced.ratio": float(np.mean(mask)),
        "egx.voiced_run.rate_per_s": runs / duration if duration > 0 else 0.0,
    }


def extract_feature_sets(prosody: Signal | None, concat: Signal | None
                         ) -> tuple[FeatureVector, FeatureVector, FeatureVector]:
    """(EG_PROSODY, EG_VQUAL, EG_ALL) for one session.

    Either stream may be None (failed upstream); its features are then
    absent rather than fabricated, and EG_ALL records the gap.
    """
    prosody_vals: dict = {}
    prosody_absent: list = []
    if prosody is not None:
        f0p = track_f0(prosody)
        _, frame_db = _frames_and_rms(prosody, FRAME_S, HOP_S)
        rms_contour = LldContour("rms_db", frame_db,
                                 frame_db > ENERGY_FLOOR_DBFS)
        fv = apply_functionals([f0p, rms_contour], set_tag="EG_PROSODY")
        prosody_vals.update(fv.values)
        prosody_absent.extend(fv.absent)
        prosody_vals.update(_voicing_stats(f0p))
        prosody_vals.update(_pause_stats(prosody))
        ordered = {n: prosody_vals[n] for n in EG_PROSODY_NAMES
                   if n in prosody_vals}
        prosody_vals = ordered
    else:
        prosody_absent = list(EG_PROSODY_NAMES)
    eg_prosody = FeatureVector("EG_PROSODY", prosody_vals,
                               tuple(prosody_absent))

    vqual_vals: dict = {}
    vqual_absent: list = []
    if concat is not None:
        f0c = track_f0(concat)
        jit, shim, hnr = jitter_shimmer_hnr(concat, f0c)
        slopes = spectral_slopes(concat, f0c)
        formants = formant_bandwidths(concat, f0c)
        fv = apply_functionals([jit, shim, hnr, *slopes, *formants],
                               set_tag="EG_VQUAL")
        vqual_vals = {n: fv.values[n] for n in EG_VQUAL_NAMES if n in fv.values}
        vqual_absent = list(fv.absent)
    else:
        vqual_absent = list(EG_VQUAL_NAMES)
    eg_vqual = FeatureVector("EG_VQUAL", vqual_vals, tuple(vqual_absent))

    all_vals = dict(eg_prosody.values)
    all_vals.update(eg_vqual.values)
    eg_all = FeatureVector("EG_ALL", all_vals,
                           eg_prosody.absent + eg_vqual.absent)
    return eg_prosody, eg_vqual, eg_all


# ---------------------------------------------------------------------------
# Embedding ingestion and feature table I/O

def _embedding_names(dim: int) -> list[str]:
    width = max(3, len(str(dim - 1)))
    return [f"emb_{i:0{width}d}" for i in range(dim)]


def _pool_rows(session_id: str, rows: list, expected_dim: int) -> FeatureVector:
    try:
        mat = np.array(rows, dtype=np.float64)
    except ValueError:
        raise InputError(f"session {session_id}: frame vectors have "
                         f"inconsistent lengths")
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.shape[1] != expected_dim:
        raise InputError(f"session {session_id}: got {mat.shape[1]} dims, "
                         f"expected {expected_dim}")
    bad = np.argwhere(~np.isfinite(mat))
    if bad.size:
        frame, dim = bad[0]
        raise InputError(f"session {session_id}: non-finite value at frame "
                         f"{frame}, dimension {dim}")
    pooled = mat.mean(axis=0)
    names = _embedding_names(expected_dim)
    return FeatureVector("EMBEDDING", dict(zip(names, pooled.tolist())))


def load_embeddings(path, expected_dim: int) -> dict:
    """session_id -> mean-pooled FeatureVector.

    CSV rows: session_id, dim, v0, v1, ...; several rows per session are
    treated as frames and averaged. JSON-lines objects: {"session_id",
    "dim", "values"} where values is one vector or a list of frame
    vectors.
    """
    path = str(path)
    grouped: dict = {}
    if path.endswith((".jsonl", ".json")):
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputError(f"line {lineno}: bad JSON: {exc}")
                sid = str(obj["session_id"])
                dim = int(obj["dim"])
                if dim != expected_dim:
                    raise InputError(f"session {sid}: declared dim {dim}, "
                                     f"expected {expected_dim}")
                vals = obj["values"]
                rows = vals if vals and isinstance(vals[0], list) else [vals]
                grouped.setdefault(sid, []).extend(rows)
    else:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row:
                    continue
                if lineno == 1 and not _is_number(row[1] if len(row) > 1 else ""):
                    continue  # header
                if len(row) < 3:
                    raise InputError(f"line {lineno}: need session_id, dim, "
                                     f"values...")
                sid, dim_s, *vals = row
                dim = int(dim_s)
                if dim != expected_dim:
                    raise InputError(f"session {sid}: declared dim {dim}, "
                                     f"expected {expected_dim}")
                grouped.setdefault(sid, []).append([float(v) for v in vals])
    if not grouped:
        raise InputError(f"no embeddings found in {path}")
    return {sid: _pool_rows(sid, rows, expected_dim)
            for sid, rows in grouped.items()}


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_feature_csv(path, vectors: dict, names=None) -> None:
    """Feature table: session_id column then features in canonical order.
    Absent features become empty cells."""
    vectors = dict(vectors)
    if not vectors:
        raise ValidationError("no feature vectors to write")
    if names is None:
        names = list(next(iter(vectors.values())).values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", *names])
        for sid in sorted(vectors):
            vec = vectors[sid]
            writer.writerow([sid] + [repr(vec.values[n]) if n in vec.values
                                     else "" for n in names])


def read_feature_csv(path) -> tuple[list[str], dict]:
    """Inverse of write_feature_csv: (names, session_id -> {name: value})."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "session_id":
            raise InputError(f"{path}: first column must be session_id")
        names = header[1:]
        rows: dict = {}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path} line {lineno}: expected "
                                 f"{len(header)} cells, got {len(row)}")
            sid = row[0]
            if sid in rows:
                raise InputError(f"{path} line {lineno}: duplicate session "
                                 f"{sid}")
            rows[sid] = {n: float(v) for n, v in zip(names, row[1:]) if v != ""}
    return names, rows
