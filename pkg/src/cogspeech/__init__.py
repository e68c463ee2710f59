"""Speech-based cognitive assessment pipeline.

Submodules
----------
corpus     session manifests, label hierarchy, RTTM timelines
dsp        high-pass filtering, spectral gating, loudness normalization
qc         acoustic quality gate (duration / RMS / clipping / SNR)
diar_eval  diarization metrics (DER, JER, purity, coverage) and grid search
streams    prosody-preserved and concatenated stream construction
features   hand-crafted acoustic feature sets and embedding ingestion
model      nested cross-validation harness, estimators, metrics
cli        command-line entry points
"""

__version__ = "0.1.0"
