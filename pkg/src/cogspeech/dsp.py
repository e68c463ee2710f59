"""Signal conditioning: high-pass filtering, spectral gating, loudness.

The processing chain is fixed as high-pass -> spectral gate -> loudness
normalization; ``preprocess_chain`` applies it and emits one audit entry
per stage (stage name, parameters, output RMS).

Loudness follows the integrated-measurement convention: K-weighting,
400 ms blocks at 75% overlap, an absolute -70 LUFS gate, then a relative
-10 LU gate over the surviving blocks.

Alpha semantics of the spectral gate: bins below the noise threshold are
multiplied by (1 - alpha), i.e. alpha is the attenuation fraction, so
alpha = 0 leaves the signal untouched and alpha = 1 zeroes gated bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, ValidationError

SAMPLE_RATE_MIN = 8000
SAMPLE_RATE_MAX = 192000

RMS_FLOOR_DBFS = -120.0

# Integrated loudness constants
_BLOCK_S = 0.400
_BLOCK_STEP_S = 0.100
_ABS_GATE_LUFS = -70.0
_REL_GATE_LU = -10.0
_LOUDNESS_OFFSET = -0.691


@dataclass(frozen=True)
class Signal:
    """Mono audio: float64 samples at nominal [-1, 1] full scale."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ValidationError(f"expected mono 1-D samples, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValidationError("non-finite samples")
        if not (SAMPLE_RATE_MIN <= self.sample_rate <= SAMPLE_RATE_MAX):
            raise ValidationError(f"sample_rate {self.sample_rate} outside "
                                  f"[{SAMPLE_RATE_MIN}, {SAMPLE_RATE_MAX}]")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def _rms_db(x: np.ndarray) -> float:
    ms = float(np.mean(np.square(x))) if len(x) else 0.0
    if ms <= 0.0:
        return RMS_FLOOR_DBFS
    return max(10.0 * math.log10(ms), RMS_FLOOR_DBFS)


@dataclass(frozen=True)
class BiquadSection:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


@dataclass(frozen=True)
class FilterSpec:
    """Cascaded biquad realization of an IIR design."""

    sections: tuple[BiquadSection, ...]
    design: dict
    sample_rate: int

    def to_sos(self) -> np.ndarray:
        return np.array([[s.b0, s.b1, s.b2, 1.0, s.a1, s.a2] for s in self.sections])

    def is_stable(self) -> bool:
        return all(np.all(np.abs(s.poles()) < 1.0) for s in self.sections)


def design_highpass(order: int, cutoff_hz: float, sample_rate: int) -> FilterSpec:
    """Butterworth high-pass as second-order sections.

    Bilinear transform with prewarping at the cutoff, so the half-power
    point (-3.01 dB) lands exactly on cutoff_hz.
    """
    if cutoff_hz >= sample_rate / 2:
        raise ConfigError(f"cutoff {cutoff_hz} Hz at or above Nyquist "
                          f"({sample_rate / 2} Hz)")
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    sos = sps.butter(order, cutoff_hz, btype="highpass", fs=sample_rate, output="sos")
    sections = tuple(
        BiquadSection(b0=row[0] / row[3], b1=row[1] / row[3], b2=row[2] / row[3],
                      a1=row[4] / row[3], a2=row[5] / row[3])
        for row in sos
    )
    spec = FilterSpec(
        sections=sections,
        design={"order": order, "cutoff_hz": cutoff_hz, "kind": "highpass"},
        sample_rate=int(sample_rate),
    )
    if not spec.is_stable():
        raise ConfigError(f"unstable design: order={order} cutoff={cutoff_hz} "
                          f"fs={sample_rate}")
    return spec


def apply_filter(spec: FilterSpec, x: Signal) -> Signal:
    """Run the biquad cascade with zero initial state."""
    if spec.sample_rate != x.sample_rate:
        raise ValidationError(f"filter designed for {spec.sample_rate} Hz, "
                              f"signal is {x.sample_rate} Hz")
    y = sps.sosfilt(spec.to_sos(), x.samples)
    return Signal(y, x.sample_rate)


def magnitude_response_db(spec: FilterSpec, freqs_hz) -> np.ndarray:
    """Filter magnitude in dB at the given frequencies."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / spec.sample_rate
    _, h = sps.sosfreqz(spec.to_sos(), worN=w)
    return 20.0 * np.log10(np.maximum(np.abs(h), 1e-300))


@dataclass(frozen=True)
class GateConfig:
    """Spectral gate parameters. Only alpha is externally prescribed;
    everything else is tunable and defaults to 25 ms / 10 ms Hann frames,
    a 0.10 noise quantile, and a 6 dB threshold margin."""

    frame_len: int
    hop: int
    window: str = "hann"
    noise_quantile: float = 0.10
    threshold_margin_db: float = 6.0
    alpha: float = 0.3

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len):
            raise ConfigError(f"need 0 < hop <= frame_len, got hop={self.hop} "
                              f"frame_len={self.frame_len}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (0.0 < self.noise_quantile < 1.0):
            raise ConfigError(f"noise_quantile must be in (0, 1), got "
                              f"{self.noise_quantile}")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")

    @classmethod
    def at_rate(cls, sample_rate: int, frame_s: float = 0.025, hop_s: float = 0.010,
                **kwargs) -> "GateConfig":
        return cls(frame_len=int(round(frame_s * sample_rate)),
                   hop=int(round(hop_s * sample_rate)), **kwargs)


def _frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _stft(x: np.ndarray, cfg: GateConfig) -> np.ndarray:
    frames = _frame_signal(x, cfg.frame_len, cfg.hop)
    return np.fft.rfft(frames * np.hanning(cfg.frame_len), axis=1)


def estimate_noise_profile(x: Signal, cfg: GateConfig) -> np.ndarray:
    """Per-bin noise magnitude: the noise_quantile of STFT magnitudes
    across frames. A tone present in more than that fraction of frames
    leaks into the profile; that is inherent to quantile estimation."""
    if len(x) < cfg.frame_len:
        raise ValidationError(f"signal ({len(x)} samples) shorter than one "
                              f"frame ({cfg.frame_len})")
    mags = np.abs(_stft(x.samples, cfg))
    return np.quantile(mags, cfg.noise_quantile, axis=0)


def spectral_gate(x: Signal, cfg: GateConfig | None = None) -> Signal:
    """Attenuate sub-threshold time-frequency bins by (1 - alpha).

    Threshold per bin: noise profile raised by threshold_margin_db.
    Reconstruction is weighted overlap-add with squared-window
    normalization, so alpha = 0 returns the input to within float error.
    """
    if cfg is None:
        cfg = GateConfig.at_rate(x.sample_rate)
    if len(x) < cfg.frame_len:
        raise ValidationError(f"signal ({len(x)} samples) shorter than one "
                              f"frame ({cfg.frame_len})")
    profile = estimate_noise_profile(x, cfg)
    threshold = profile * 10.0 ** (cfg.threshold_margin_db / 20.0)

    n = len(x)
    pad = cfg.frame_len
    padded = np.concatenate([np.zeros(pad), x.samples, np.zeros(pad + cfg.frame_len)])
    win = np.hanning(cfg.frame_len)
    frames = _frame_signal(padded, cfg.frame_len, cfg.hop)
    spec = np.fft.rfft(frames * win, axis=1)

    gain = np.where(np.abs(spec) < threshold[None, :], 1.0 - cfg.alpha, 1.0)
    recon = np.fft.irfft(spec * gain, n=cfg.frame_len, axis=1)

    out = np.zeros(len(padded))
    norm = np.zeros(len(padded))
    for m in range(frames.shape[0]):
        lo = m * cfg.hop
        out[lo:lo + cfg.frame_len] += recon[m] * win
        norm[lo:lo + cfg.frame_len] += win * win
    covered = norm > 1e-12
    if not np.all(covered[pad:pad + n]):
        raise ConfigError(f"frame/hop combination leaves gaps: frame_len="
                          f"{cfg.frame_len} hop={cfg.hop}")
    out[covered] /= norm[covered]
    return Signal(out[pad:pad + n], x.sample_rate)


@dataclass(frozen=True)
class LoudnessResult:
    """Integrated loudness; below-gate signals carry a -inf sentinel."""

    integrated_lufs: float
    gated_block_count: int

    @property
    def below_gate(self) -> bool:
        return not math.isfinite(self.integrated_lufs)


def _k_weighting_sos(sample_rate: int) -> np.ndarray:
    """Two-stage K-weighting (high shelf + high pass), designed
    parametrically so any sample rate reproduces the 48 kHz reference
    response."""
    fs = float(sample_rate)

    # Stage 1: high shelf, +4 dB above ~1.68 kHz.  Bilinear transform with
    # tan() prewarping; the bandedge gain exponent keeps the transition
    # shape of the 48 kHz reference filter at any rate.
    G, Q, fc = 3.999843853973347, 0.7071752369554193, 1681.9744509555319
    K = math.tan(math.pi * fc / fs)
    Vh = 10.0 ** (G / 20.0)
    Vb = Vh ** 0.4996667741545416
    a0 = 1.0 + K / Q + K * K
    shelf = [
        (Vh + Vb * K / Q + K * K) / a0,
        2.0 * (K * K - Vh) / a0,
        (Vh - Vb * K / Q + K * K) / a0,
        1.0,
        2.0 * (K * K - 1.0) / a0,
        (1.0 - K / Q + K * K) / a0,
    ]

    # Stage 2: high pass at ~38 Hz.  Numerator left unnormalized on
    # purpose, matching the reference response above the corner.
    Q2, fc2 = 0.5003270373223665, 38.13547087613982
    K = math.tan(math.pi * fc2 / fs)
    a0 = 1.0 + K / Q2 + K * K
    hp = [
        1.0,
        -2.0,
        1.0,
        1.0,
        2.0 * (K * K - 1.0) / a0,
        (1.0 - K / Q2 + K * K) / a0,
    ]

    return np.array([shelf, hp])


def measure_loudness(x: Signal) -> LoudnessResult:
    """Gated integrated loudness of a mono signal."""
    block = int(round(_BLOCK_S * x.sample_rate))
    step = int(round(_BLOCK_STEP_S * x.sample_rate))
    if len(x) < block:
        return LoudnessResult(float("-inf"), 0)

    weighted = sps.sosfilt(_k_weighting_sos(x.sample_rate), x.samples)
    css = np.concatenate([[0.0], np.cumsum(np.square(weighted))])
    n_blocks = 1 + (len(x) - block) // step
    starts = step * np.arange(n_blocks)
    powers = (css[starts + block] - css[starts]) / block

    with np.errstate(divide="ignore"):
        levels = _LOUDNESS_OFFSET + 10.0 * np.log10(powers)

    abs_pass = levels > _ABS_GATE_LUFS
    if not np.any(abs_pass):
        return LoudnessResult(float("-inf"), 0)
    rel_threshold = (_LOUDNESS_OFFSET + 10.0 * np.log10(np.mean(powers[abs_pass]))
                     + _REL_GATE_LU)
    gated = abs_pass & (levels > rel_threshold)
    if not np.any(gated):
        return LoudnessResult(float("-inf"), 0)
    integrated = _LOUDNESS_OFFSET + 10.0 * np.log10(np.mean(powers[gated]))
    return LoudnessResult(float(integrated), int(np.count_nonzero(gated)))


@dataclass(frozen=True)
class NormalizeResult:
    signal: Signal
    gain_db: float
    input_lufs: float
    output_lufs: float
    clipped_samples: int  # samples beyond +-1 after gain; reported, not clipped


def normalize_loudness(x: Signal, target_lufs: float = -23.0) -> NormalizeResult:
    """Scale to the target integrated loudness with a single gain."""
    measured = measure_loudness(x)
    if measured.below_gate:
        raise ValidationError("input below the absolute loudness gate; "
                              "nothing to normalize")
    gain_db = target_lufs - measured.integrated_lufs
    y = x.samples * 10.0 ** (gain_db / 20.0)
    out = Signal(y, x.sample_rate)
    after = measure_loudness(out)
    return NormalizeResult(
        signal=out,
        gain_db=float(gain_db),
        input_lufs=measured.integrated_lufs,
        output_lufs=after.integrated_lufs,
        clipped_samples=int(np.count_nonzero(np.abs(y) > 1.0)),
    )


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters of the fixed three-stage conditioning chain."""

    highpass_order: int = 6
    highpass_cutoff_hz: float = 100.0
    gate_alpha: float = 0.3
    gate_noise_quantile: float = 0.10
    gate_margin_db: float = 6.0
    gate_frame_s: float = 0.025
    gate_hop_s: float = 0.010
    loudness_target_lufs: float = -23.0


def preprocess_chain(x: Signal, cfg: PreprocessConfig | None = None
                     ) -> tuple[Signal, list[dict]]:
    """high-pass -> spectral gate -> loudness normalization.

    Returns the conditioned signal and the per-stage audit entries.
    """
    if cfg is None:
        cfg = PreprocessConfig()
    audit = []

    spec = design_highpass(cfg.highpass_order, cfg.highpass_cutoff_hz, x.sample_rate)
    y = apply_filter(spec, x)
    audit.append({
        "stage": "highpass",
        "params": dict(spec.design),
        "output_rms_dbfs": round(_rms_db(y.samples), 4),
    })

    gate_cfg = GateConfig.at_rate(
        x.sample_rate, frame_s=cfg.gate_frame_s, hop_s=cfg.gate_hop_s,
        noise_quantile=cfg.gate_noise_quantile,
        threshold_margin_db=cfg.gate_margin_db, alpha=cfg.gate_alpha,
    )
    y = spectral_gate(y, gate_cfg)
    audit.append({
        "stage": "spectral_gate",
        "params": {"alpha": gate_cfg.alpha, "noise_quantile": gate_cfg.noise_quantile,
                   "threshold_margin_db": gate_cfg.threshold_margin_db,
                   "frame_len": gate_cfg.frame_len, "hop": gate_cfg.hop},
        "output_rms_dbfs": round(_rms_db(y.samples), 4),
    })

    norm = normalize_loudness(y, cfg.loudness_target_lufs)
    audit.append({
        "stage": "loudness_normalize",
        "params": {"target_lufs": cfg.loudness_target_lufs},
        "gain_db": round(norm.gain_db, 4),
        "clipped_samples": norm.clipped_samples,
        "output_rms_dbfs": round(_rms_db(norm.signal.samples), 4),
    })
    return norm.signal, audit


def make_sine(freq_hz: float, duration_s: float, sample_rate: int,
              peak: float = 1.0, phase: float = 0.0) -> Signal:
    """Test/reference tone generator."""
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return Signal(peak * np.sin(2 * np.pi * freq_hz * t + phase), sample_rate)
