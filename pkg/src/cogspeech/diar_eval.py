"""Diarization scoring and the preprocessing grid search.

Metrics: DER with a collar excluded around reference boundaries (md-eval
convention), JER, cluster purity and coverage. DER components come from
an exact interval sweep, not frame sampling. The speaker mapping is the
overlap-maximizing one-to-one partial assignment; among equally good
assignments the lexicographically smallest (by hyp label, ref label) is
chosen so results never depend on solver internals.

The grid search drives an external diarizer through a subprocess adapter
(command template with {input} and {output} placeholders, RTTM output,
nonzero exit marks the point failed) and ranks points by tuning-split
DER, breaking ties by JER then purity then point index.
"""

from __future__ import annotations

import csv
import itertools
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Timeline, load_rttm
from .dsp import PreprocessConfig, Signal, preprocess_chain
from .errors import AdapterError, ConfigError, ValidationError
from . import wavio

_TIE_EPS = 1e-9
_ENUM_LIMIT = 8  # exhaustive assignment up to this many speakers per side


@dataclass(frozen=True)
class ScoringConfig:
    collar_s: float = 0.250
    frame_s: float = 0.010
    score_overlap: bool = True

    def __post_init__(self):
        if self.collar_s < 0:
            raise ConfigError("collar_s must be >= 0")
        if self.frame_s <= 0:
            raise ConfigError("frame_s must be > 0")


@dataclass(frozen=True)
class DerBreakdown:
    missed_s: float
    false_alarm_s: float
    confusion_s: float
    scored_total_s: float
    der: float  # NaN when scored_total_s == 0

    @property
    def defined(self) -> bool:
        return self.scored_total_s > 0.0


def _speaker_intervals(tl: Timeline) -> dict:
    """Merged (start, end) lists per speaker."""
    out = {}
    for spk in tl.speakers():
        merged = []
        for seg in tl.for_speaker(spk):
            if merged and seg.onset <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], seg.end))
            else:
                merged.append((seg.onset, seg.end))
        out[spk] = merged
    return out


def _interval_total(intervals) -> float:
    return sum(e - s for s, e in intervals)


def _pair_overlap(a, b) -> float:
    """Total overlap of two merged interval lists."""
    total = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def _merge(intervals) -> list:
    merged = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _best_assignment(ref_spks, hyp_spks, overlap) -> dict:
    """hyp -> ref assignment maximizing total overlap.

    Exhaustive for small speaker counts so the tie-break (lexicographic
    over the pair list) is exact; Hungarian for larger problems, where
    ties are broken by the solver.
    """
    ref_spks = sorted(ref_spks)
    hyp_spks = sorted(hyp_spks)
    if not ref_spks or not hyp_spks:
        return {}
    if max(len(ref_spks), len(hyp_spks)) <= _ENUM_LIMIT:
        best_total, best_pairs = -1.0, None
        k = min(len(ref_spks), len(hyp_spks))
        if len(hyp_spks) <= len(ref_spks):
            for refs in itertools.permutations(ref_spks, k):
                pairs = tuple(sorted(zip(hyp_spks, refs)))
                total = sum(overlap.get((r, h), 0.0) for h, r in pairs)
                if total > best_total + _TIE_EPS or (
                        abs(total - best_total) <= _TIE_EPS
                        and (best_pairs is None or pairs < best_pairs)):
                    best_total, best_pairs = total, pairs
        else:
            for hyps in itertools.permutations(hyp_spks, k):
                pairs = tuple(sorted(zip(hyps, ref_spks)))
                total = sum(overlap.get((r, h), 0.0) for h, r in pairs)
                if total > best_total + _TIE_EPS or (
                        abs(total - best_total) <= _TIE_EPS
                        and (best_pairs is None or pairs < best_pairs)):
                    best_total, best_pairs = total, pairs
        chosen = best_pairs
    else:
        cost = np.zeros((len(hyp_spks), len(ref_spks)))
        for i, h in enumerate(hyp_spks):
            for j, r in enumerate(ref_spks):
                cost[i, j] = -overlap.get((r, h), 0.0)
        rows, cols = linear_sum_assignment(cost)
        chosen = tuple((hyp_spks[i], ref_spks[j]) for i, j in zip(rows, cols))
    # zero-overlap pairs carry no information; dropping them keeps the
    # mapping minimal without changing any metric
    return {h: r for h, r in chosen if overlap.get((r, h), 0.0) > 0.0}


def _raw_overlap_matrix(ref: Timeline, hyp: Timeline):
    ref_iv = _speaker_intervals(ref)
    hyp_iv = _speaker_intervals(hyp)
    overlap = {}
    for r, riv in ref_iv.items():
        for h, hiv in hyp_iv.items():
            overlap[(r, h)] = _pair_overlap(riv, hiv)
    return ref_iv, hyp_iv, overlap


def optimal_speaker_mapping(ref: Timeline, hyp: Timeline) -> dict:
    """One-to-one partial hyp-speaker -> ref-speaker mapping maximizing
    total (uncollared) overlap duration."""
    ref_iv, hyp_iv, overlap = _raw_overlap_matrix(ref, hyp)
    return _best_assignment(ref_iv.keys(), hyp_iv.keys(), overlap)


def _collar_zones(ref: Timeline, collar_s: float) -> list:
    if collar_s <= 0:
        return []
    zones = []
    for seg in ref:
        zones.append((seg.onset - collar_s, seg.onset + collar_s))
        zones.append((seg.end - collar_s, seg.end + collar_s))
    return _merge(zones)


def _inside(point: float, merged_intervals) -> bool:
    for s, e in merged_intervals:
        if s <= point < e:
            return True
        if s > point:
            break
    return False


def der(ref: Timeline, hyp: Timeline, cfg: ScoringConfig | None = None
        ) -> DerBreakdown:
    """Collar-excluded diarization error rate via an interval sweep.

    The speaker mapping is optimized on collar-excluded overlap, which
    makes the DER value independent of how overlap ties are broken (DER
    depends on the mapping only through its total).
    """
    if cfg is None:
        cfg = ScoringConfig()
    ref_iv = _speaker_intervals(ref)
    hyp_iv = _speaker_intervals(hyp)
    zones = _collar_zones(ref, cfg.collar_s)

    bounds = set()
    for ivs in list(ref_iv.values()) + list(hyp_iv.values()):
        for s, e in ivs:
            bounds.add(s)
            bounds.add(e)
    for s, e in zones:
        bounds.add(s)
        bounds.add(e)
    bounds = sorted(bounds)

    missed = fa = scored_total = 0.0
    scored_overlap = {}
    spans = []  # (duration, active ref speakers, active hyp speakers)
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        d = t1 - t0
        if d <= 0:
            continue
        mid = (t0 + t1) / 2.0
        if _inside(mid, zones):
            continue
        active_r = [r for r, ivs in ref_iv.items() if _inside(mid, ivs)]
        active_h = [h for h, ivs in hyp_iv.items() if _inside(mid, ivs)]
        if not cfg.score_overlap and len(active_r) >= 2:
            continue
        nr, nh = len(active_r), len(active_h)
        scored_total += nr * d
        missed += max(0, nr - nh) * d
        fa += max(0, nh - nr) * d
        spans.append((d, active_r, active_h))
        for r in active_r:
            for h in active_h:
                scored_overlap[(r, h)] = scored_overlap.get((r, h), 0.0) + d

    mapping = _best_assignment(ref_iv.keys(), hyp_iv.keys(), scored_overlap)
    matched = {(r, h) for h, r in mapping.items()}
    # per-span confusion (never negative, exactly zero for hyp == ref)
    confusion = 0.0
    for d, active_r, active_h in spans:
        n_match = sum(1 for r in active_r for h in active_h
                      if (r, h) in matched)
        confusion += (min(len(active_r), len(active_h)) - n_match) * d
    if scored_total > 0:
        value = (missed + fa + confusion) / scored_total
    else:
        value = float("nan")
    return DerBreakdown(missed_s=missed, false_alarm_s=fa, confusion_s=confusion,
                        scored_total_s=scored_total, der=value)


def jer(ref: Timeline, hyp: Timeline) -> float:
    """Mean per-reference-speaker Jaccard error under the optimal
    (uncollared) mapping; unmapped reference speakers score 1."""
    if len(ref) == 0:
        return float("nan")
    ref_iv, hyp_iv, overlap = _raw_overlap_matrix(ref, hyp)
    mapping = _best_assignment(ref_iv.keys(), hyp_iv.keys(), overlap)
    to_hyp = {r: h for h, r in mapping.items()}
    errors = []
    for r, riv in sorted(ref_iv.items()):
        h = to_hyp.get(r)
        if h is None:
            errors.append(1.0)
            continue
        inter = overlap[(r, h)]
        union = _interval_total(riv) + _interval_total(hyp_iv[h]) - inter
        errors.append(1.0 - inter / union if union > 0 else 1.0)
    return float(np.mean(errors))


def purity_coverage(ref: Timeline, hyp: Timeline) -> tuple[float, float]:
    """Cluster purity (hyp side) and coverage (ref side), mapping-free."""
    ref_iv, hyp_iv, overlap = _raw_overlap_matrix(ref, hyp)
    hyp_total = sum(_interval_total(iv) for iv in hyp_iv.values())
    ref_total = sum(_interval_total(iv) for iv in ref_iv.values())
    if hyp_total > 0:
        purity = sum(max((overlap[(r, h)] for r in ref_iv), default=0.0)
                     for h in hyp_iv) / hyp_total
    else:
        purity = float("nan")
    if ref_total > 0:
        coverage = sum(max((overlap[(r, h)] for h in hyp_iv), default=0.0)
                       for r in ref_iv) / ref_total
    else:
        coverage = float("nan")
    return purity, coverage


def score_pair(ref: Timeline, hyp: Timeline, cfg: ScoringConfig | None = None
               ) -> dict:
    """All four metrics plus the DER components, as a flat dict."""
    breakdown = der(ref, hyp, cfg)
    p, c = purity_coverage(ref, hyp)
    return {
        "der": breakdown.der,
        "jer": jer(ref, hyp),
        "purity": p,
        "coverage": c,
        "missed_s": breakdown.missed_s,
        "false_alarm_s": breakdown.false_alarm_s,
        "confusion_s": breakdown.confusion_s,
        "scored_total_s": breakdown.scored_total_s,
    }


# ---------------------------------------------------------------------------
# Grid search

# grid keys consumed by the preprocessing chain; anything else must be
# prefixed "diarizer." and is forwarded to the adapter template
_DSP_KEYS = {
    "highpass_order": "highpass_order",
    "highpass_cutoff_hz": "highpass_cutoff_hz",
    "gate_alpha": "gate_alpha",
    "gate_noise_quantile": "gate_noise_quantile",
    "gate_margin_db": "gate_margin_db",
    "loudness_target_lufs": "loudness_target_lufs",
}
_DIARIZER_PREFIX = "diarizer."


@dataclass(frozen=True)
class GridPoint:
    index: int
    params: tuple  # sorted (name, value) pairs

    def as_dict(self) -> dict:
        return dict(self.params)

    def dsp_config(self) -> PreprocessConfig:
        kwargs = {field: value for name, value in self.params
                  if (field := _DSP_KEYS.get(name))}
        return PreprocessConfig(**kwargs)

    def dsp_key(self) -> tuple:
        return tuple((n, v) for n, v in self.params if n in _DSP_KEYS)

    def adapter_params(self) -> dict:
        return {name[len(_DIARIZER_PREFIX):]: value for name, value in self.params
                if name.startswith(_DIARIZER_PREFIX)}


@dataclass(frozen=True)
class GridResult:
    point: GridPoint
    status: str  # "ok" | "failed"
    error: str | None = None
    tuning: dict | None = None
    validation: dict | None = None


@dataclass(frozen=True)
class GridSession:
    session_id: str
    subject_id: str
    audio_path: str
    reference: Timeline


@dataclass(frozen=True)
class GridSplit:
    tuning_subjects: frozenset
    validation_subjects: frozenset

    def __post_init__(self):
        shared = self.tuning_subjects & self.validation_subjects
        if shared:
            raise ValidationError(f"tuning/validation subjects overlap: "
                                  f"{sorted(shared)}")
        if not self.tuning_subjects or not self.validation_subjects:
            raise ValidationError("both splits need at least one subject")


@dataclass(frozen=True)
class DiarizerAdapter:
    """Subprocess contract: template with {input} and {output} (and
    optionally {session_id} plus bare diarizer parameter names); the
    command must write RTTM to {output} and exit 0."""

    command_template: str
    timeout_s: float = 600.0

    def run(self, input_wav: str, output_rttm: str, session_id: str,
            params: dict) -> Timeline:
        try:
            cmd = self.command_template.format(
                input=input_wav, output=output_rttm, session_id=session_id,
                **params)
        except KeyError as exc:
            raise AdapterError(f"template placeholder {exc} has no value")
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True,
                              timeout=self.timeout_s)
        if proc.returncode != 0:
            raise AdapterError(f"adapter exited {proc.returncode} for "
                               f"{session_id}: {proc.stderr.strip()[:500]}")
        if not Path(output_rttm).exists():
            raise AdapterError(f"adapter wrote no output for {session_id}")
        return load_rttm(output_rttm)


def expand_grid(schema: dict) -> list[GridPoint]:
    """Cartesian product over sorted parameter names; point index is the
    enumeration order and is the final ranking tie-break."""
    if not schema:
        raise ConfigError("empty grid schema")
    for name, values in schema.items():
        known = name in _DSP_KEYS or name.startswith(_DIARIZER_PREFIX)
        if not known:
            raise ConfigError(f"unknown grid parameter {name!r}; dsp keys: "
                              f"{sorted(_DSP_KEYS)}, or prefix with "
                              f"'{_DIARIZER_PREFIX}'")
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid parameter {name!r} needs a nonempty list")
    names = sorted(schema)
    points = []
    for idx, combo in enumerate(itertools.product(*(schema[n] for n in names))):
        points.append(GridPoint(index=idx, params=tuple(zip(names, combo))))
    return points


def _aggregate(per_session: list[dict]) -> dict:
    """Pool session scores: DER from summed components; JER, purity and
    coverage as plain session means (NaN sessions skipped)."""
    missed = sum(s["missed_s"] for s in per_session)
    fa = sum(s["false_alarm_s"] for s in per_session)
    conf = sum(s["confusion_s"] for s in per_session)
    total = sum(s["scored_total_s"] for s in per_session)
    der_value = (missed + fa + conf) / total if total > 0 else float("nan")
    jers = [s["jer"] for s in per_session if not np.isnan(s["jer"])]
    purities = [s["purity"] for s in per_session if not np.isnan(s["purity"])]
    coverages = [s["coverage"] for s in per_session if not np.isnan(s["coverage"])]
    return {
        "der": der_value,
        "jer": float(np.mean(jers)) if jers else float("nan"),
        "purity": float(np.mean(purities)) if purities else float("nan"),
        "coverage": float(np.mean(coverages)) if coverages else float("nan"),
    }


class _PreprocessCache:
    """Preprocessed wavs keyed by (session, dsp params); filled before the
    parallel phase so adapter workers only read."""

    def __init__(self, workdir: Path):
        self.workdir = workdir
        self._paths = {}

    def populate(self, sessions, dsp_keys):
        for key_idx, (dsp_key, cfg) in enumerate(dsp_keys):
            for sess in sessions:
                x, rate = wavio.read_wav(sess.audio_path)
                processed, _ = preprocess_chain(Signal(x, rate), cfg)
                out = self.workdir / f"pp_{key_idx}_{sess.session_id}.wav"
                wavio.write_wav(out, processed.samples, processed.sample_rate)
                self._paths[(sess.session_id, dsp_key)] = str(out)

    def path(self, session_id: str, dsp_key: tuple) -> str:
        return self._paths[(session_id, dsp_key)]


def _evaluate_point(point: GridPoint, sessions, cache: _PreprocessCache,
                    adapter: DiarizerAdapter, scoring: ScoringConfig,
                    workdir: Path) -> list[dict]:
    scores = []
    for sess in sessions:
        wav = cache.path(sess.session_id, point.dsp_key())
        out = workdir / f"hyp_{point.index}_{sess.session_id}.rttm"
        hyp = adapter.run(wav, str(out), sess.session_id, point.adapter_params())
        scores.append(score_pair(sess.reference, hyp, scoring))
    return scores


def run_grid_search(schema: dict, sessions, adapter: DiarizerAdapter,
                    split: GridSplit, scoring: ScoringConfig | None = None,
                    workdir=None, jobs: int = 1) -> list[GridResult]:
    """Evaluate every grid point on the tuning split, rank, and score the
    winner on the validation split.

    Returns results in rank order (failed points last, by index). Points
    whose adapter invocation fails are marked and skipped; if every point
    fails the search itself fails.
    """
    if scoring is None:
        scoring = ScoringConfig()
    points = expand_grid(schema)
    tuning = [s for s in sessions if s.subject_id in split.tuning_subjects]
    validation = [s for s in sessions if s.subject_id in split.validation_subjects]
    stray = [s.session_id for s in sessions
             if s.subject_id not in split.tuning_subjects
             and s.subject_id not in split.validation_subjects]
    if stray:
        raise ValidationError(f"sessions outside both splits: {stray}")
    if not tuning or not validation:
        raise ValidationError("need sessions on both sides of the split")

    own_tmp = None
    if workdir is None:
        own_tmp = tempfile.TemporaryDirectory(prefix="gridsearch_")
        workdir = own_tmp.name
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    try:
        dsp_keys = {}
        for p in points:
            dsp_keys.setdefault(p.dsp_key(), p.dsp_config())
        cache = _PreprocessCache(workdir)
        cache.populate(sessions, list(dsp_keys.items()))

        def work(point: GridPoint) -> GridResult:
            try:
                scores = _evaluate_point(point, tuning, cache, adapter,
                                         scoring, workdir)
            except Exception as exc:  # any per-point failure: mark, move on
                return GridResult(point=point, status="failed", error=str(exc))
            return GridResult(point=point, status="ok",
                              tuning=_aggregate(scores))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(work, points))
        else:
            results = [work(p) for p in points]

        ok = [r for r in results if r.status == "ok"]
        failed = [r for r in results if r.status == "failed"]
        if not ok:
            raise AdapterError("every grid point failed")

        def rank_key(r: GridResult):
            t = r.tuning
            der_v = t["der"] if not np.isnan(t["der"]) else float("inf")
            jer_v = t["jer"] if not np.isnan(t["jer"]) else float("inf")
            pur_v = t["purity"] if not np.isnan(t["purity"]) else 0.0
            return (der_v, jer_v, -pur_v, r.point.index)

        ok.sort(key=rank_key)
        top = ok[0]
        val_scores = _evaluate_point(top.point, validation, cache, adapter,
                                     scoring, workdir)
        ok[0] = replace(top, validation=_aggregate(val_scores))
        return ok + sorted(failed, key=lambda r: r.point.index)
    finally:
        if own_tmp is not None:
            own_tmp.cleanup()


def write_grid_csv(results, path) -> None:
    """One row per point, rank order preserved."""
    results = list(results)
    if not results:
        raise ValidationError("no results to write")
    param_names = [n for n, _ in results[0].point.params]
    metric_cols = ["der", "jer", "purity", "coverage"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "point_index", "status", *param_names,
                         *(f"tuning_{m}" for m in metric_cols),
                         *(f"validation_{m}" for m in metric_cols), "error"])
        for rank, r in enumerate(results):
            row = [rank, r.point.index, r.status]
            row += [r.point.as_dict()[n] for n in param_names]
            for block in (r.tuning, r.validation):
                row += ["" if block is None else f"{block[m]:.6f}"
                        for m in metric_cols]
            row.append(r.error or "")
            writer.writerow(row)
