"""Synthetic cohort generator for desk-scale end-to-end runs.

Beats are built in vectorcardiogram space as sums of Gaussian bumps (P, a
biphasic R/S pair, T) along unit directions, then mapped to the 8 independent
leads with the pseudoinverse of the lead-reduction matrix, so extraction
recovers the injected loops up to noise. The four derived limb leads are
reconstructed from I and II. Class effects are injected in VCG space: positives
get their repolarization axis rotated away from the depolarization axis and
their whole loop amplitude rescaled; risk covariates shift by a separate knob.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import PatientRecord, save_cohort
from .ecg_ingest import round_half_up
from .errors import ConfigError
from .vcg import KORS_INPUT_LEADS, KORS_MATRIX

# fixed 8x3 synthesis matrix: right-inverse of the lead-reduction matrix
SYNTH_MATRIX = np.linalg.pinv(KORS_MATRIX)

# covariate prevalences (negative class) and their positive-class targets
_RISK_RATES = {
    "sex_f": (0.547, 0.412),
    "prev_cs": (0.085, 0.235),
    "prev_mi": (0.229, 0.510),
    "prev_pci": (0.090, 0.392),
    "prev_stroke": (0.058, 0.098),
    "htn": (0.677, 0.745),
    "dm": (0.229, 0.490),
}


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 300
    positive_fraction: float = 0.186
    seed: int = 0
    sampling_rate_hz: float = 240.0
    duration_s: float = 7.0
    noise_sd_mv: float = 0.01
    # class effects in VCG space; risk_effect scales the covariate shifts
    qrst_angle_shift_deg: float = 30.0
    svg_scale: float = 0.75
    risk_effect: float = 1.0
    # wave shapes (amplitudes mV, widths ms)
    r_amp_mv: float = 1.4
    r_width_ms: float = 16.0
    s_amp_mv: float = 0.5
    s_width_ms: float = 12.0
    t_amp_mv: float = 0.30
    t_width_ms: float = 45.0
    p_amp_mv: float = 0.08
    p_width_ms: float = 24.0
    # geometry and timing
    qrst_angle_base_deg: float = 40.0
    qrst_angle_sd_deg: float = 15.0
    rr_mean_ms: float = 870.0
    rr_sd_ms: float = 80.0
    amp_jitter: float = 0.12
    width_jitter: float = 0.08

    def __post_init__(self):
        if self.n_patients < 10:
            raise ConfigError("n_patients must be at least 10")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError("positive_fraction must be in (0, 1)")
        if self.noise_sd_mv < 0:
            raise ConfigError("noise_sd_mv must be non-negative")


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


_BASE_QRS_DIR = _unit([0.66, 0.73, 0.15])
_BASE_P_DIR = _unit([0.40, 0.90, 0.10])


def _rotate_from(u, angle_deg, rng):
    """Unit vector at the given angle from u, around a random in-plane axis."""
    while True:
        w = rng.normal(size=3)
        w = w - np.dot(w, u) * u
        norm = np.linalg.norm(w)
        if norm > 1e-9:
            break
    w /= norm
    a = math.radians(angle_deg)
    return math.cos(a) * u + math.sin(a) * w


@dataclass(frozen=True)
class _BeatShape:
    """Per-patient beat template: bump (amp, width_ms, center_ms, direction)."""

    bumps: tuple
    landmarks_ms: dict


def _draw_shape(cfg: SynthConfig, rng, positive: bool):
    jit = lambda base, rel: base * float(np.exp(rng.normal(0.0, rel)))
    r_amp = jit(cfg.r_amp_mv, cfg.amp_jitter)
    s_amp = jit(cfg.s_amp_mv, cfg.amp_jitter)
    t_amp = jit(cfg.t_amp_mv, cfg.amp_jitter)
    p_amp = jit(cfg.p_amp_mv, cfg.amp_jitter)
    r_w = jit(cfg.r_width_ms, cfg.width_jitter)
    s_w = jit(cfg.s_width_ms, cfg.width_jitter)
    t_w = jit(cfg.t_width_ms, cfg.width_jitter)
    p_w = jit(cfg.p_width_ms, cfg.width_jitter)

    angle = float(np.clip(rng.normal(cfg.qrst_angle_base_deg, cfg.qrst_angle_sd_deg), 5.0, 150.0))
    if positive:
        angle = min(angle + cfg.qrst_angle_shift_deg, 170.0)
    scale = cfg.svg_scale if positive else 1.0

    u_q = _unit(_BASE_QRS_DIR + rng.normal(0.0, 0.08, size=3))
    u_t = _rotate_from(u_q, angle, rng)

    qrs_dur = float(np.clip(rng.normal(92.0, 7.0), 70.0, 120.0))
    qt = float(np.clip(rng.normal(386.0, 20.0), 320.0, 460.0))
    pr = float(np.clip(rng.normal(165.0, 12.0), 120.0, 210.0))
    p_dur = float(np.clip(rng.normal(104.0, 8.0), 80.0, min(130.0, pr - 10.0)))

    qrs_on = -0.35 * qrs_dur
    qrs_off = qrs_on + qrs_dur
    s_center = qrs_off - 3.0 * s_w
    t_off = qrs_on + qt
    t_center = t_off - 3.0 * t_w
    t_on = max(qrs_off + 8.0, t_center - 3.0 * t_w)
    p_on = qrs_on - pr
    p_center = p_on + 0.5 * p_dur

    bumps = (
        (scale * p_amp, p_w, p_center, _unit(_BASE_P_DIR + rng.normal(0.0, 0.05, size=3))),
        (scale * r_amp, r_w, 0.0, u_q),
        (-scale * s_amp, s_w, s_center, u_q),
        (scale * t_amp, t_w, t_center, u_t),
    )
    landmarks = {
        "baseline": -80.0,
        "p_on": p_on, "p_peak": p_center, "p_off": p_on + p_dur,
        "qrs_on": qrs_on, "qrs_peak": 0.0, "qrs_off": qrs_off,
        "t_on": t_on, "t_peak": t_center, "t_off": t_off,
    }
    return _BeatShape(bumps=bumps, landmarks_ms=landmarks), angle, scale


def vcg_waveform(shape: _BeatShape, t_ms: np.ndarray) -> np.ndarray:
    """Closed-form template evaluated at times (ms relative to the R peak); 3 x len(t)."""
    v = np.zeros((3, len(t_ms)))
    for amp, width, center, direction in shape.bumps:
        v += np.outer(direction, amp * np.exp(-0.5 * ((t_ms - center) / width) ** 2))
    return v


def _draw_covariates(cfg: SynthConfig, rng, positive: bool):
    def rate(name):
        p_neg, p_pos = _RISK_RATES[name]
        p = p_neg + cfg.risk_effect * (p_pos - p_neg) if positive else p_neg
        return float(np.clip(p, 0.02, 0.98))

    sex = "F" if rng.random() < rate("sex_f") else "M"
    age = float(np.clip(rng.normal(57.3 + (cfg.risk_effect * 6.4 if positive else 0.0), 11.0), 18.0, 95.0))
    bmi = float(np.clip(rng.normal(26.8 + (cfg.risk_effect * 0.7 if positive else 0.0), 4.2), 15.0, 55.0))
    flags = {name: bool(rng.random() < rate(name))
             for name in ("prev_cs", "prev_mi", "prev_pci", "prev_stroke", "htn", "dm")}
    return sex, age, bmi, flags


def generate(cfg: SynthConfig, out_dir) -> dict:
    """Write ECG traces, annotation files, the base cohort table and a ground
    truth table under out_dir; returns summary counts and paths."""
    out = Path(out_dir)
    ecg_dir = out / "ecg"
    fid_dir = out / "fiducials"
    ecg_dir.mkdir(parents=True, exist_ok=True)
    fid_dir.mkdir(parents=True, exist_ok=True)

    n_pos = round_half_up(cfg.n_patients * cfg.positive_fraction)
    flags = np.zeros(cfg.n_patients, dtype=bool)
    flags[:n_pos] = True
    np.random.default_rng(np.random.SeedSequence((cfg.seed, 0))).shuffle(flags)

    fs = cfg.sampling_rate_hz
    n_samples = round(cfg.duration_s * fs)
    records, truth_rows = [], []

    for i in range(cfg.n_patients):
        pid = f"p{i + 1:04d}"
        positive = bool(flags[i])
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, i)))
        shape, angle, scale = _draw_shape(cfg, rng, positive)

        # beat centers on integer samples, spaced by a jittered RR interval
        rr_ms = float(np.clip(rng.normal(cfg.rr_mean_ms, cfg.rr_sd_ms), 600.0, 1200.0))
        centers = []
        c = 400.0
        while c <= cfg.duration_s * 1000.0 - 520.0:
            centers.append(round_half_up(c * fs / 1000.0))
            c += rr_ms + float(rng.normal(0.0, 4.0))

        v = np.zeros((3, n_samples))
        t_axis_ms = np.arange(n_samples) * 1000.0 / fs
        for center in centers:
            v += vcg_waveform(shape, t_axis_ms - t_axis_ms[center])

        leads8 = SYNTH_MATRIX @ v  # rows in KORS_INPUT_LEADS order
        by_name = dict(zip(KORS_INPUT_LEADS, leads8))
        traces = np.vstack([
            by_name["I"], by_name["II"], by_name["II"] - by_name["I"],
            -(by_name["I"] + by_name["II"]) / 2.0,
            by_name["I"] - by_name["II"] / 2.0,
            by_name["II"] - by_name["I"] / 2.0,
            by_name["V1"], by_name["V2"], by_name["V3"],
            by_name["V4"], by_name["V5"], by_name["V6"],
        ])
        if cfg.noise_sd_mv > 0:
            traces = traces + rng.normal(0.0, cfg.noise_sd_mv, size=traces.shape)

        with open(ecg_dir / f"{pid}.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"sample_rate_hz={fs:g} gain_uv_per_unit=1.0\n")
            fh.write("I,II,III,aVR,aVL,aVF,V1,V2,V3,V4,V5,V6\n")
            np.savetxt(fh, traces.T * 1000.0, fmt="%.3f", delimiter=",", newline="\n")

        marks = {k: round_half_up(ms * fs / 1000.0) for k, ms in shape.landmarks_ms.items()}
        beats = []
        for center in centers:
            beats.append({
                "baseline": center + marks["baseline"],
                "p": {"onset": center + marks["p_on"], "peak": center + marks["p_peak"],
                      "offset": center + marks["p_off"]},
                "qrs": {"onset": center + marks["qrs_on"], "peak": center,
                        "offset": center + marks["qrs_off"]},
                "t": {"onset": center + marks["t_on"], "peak": center + marks["t_peak"],
                      "offset": center + marks["t_off"]},
            })
        (fid_dir / f"{pid}.json").write_text(
            json.dumps({"beats": beats}, indent=1) + "\n", encoding="utf-8")

        sex, age, bmi, risk = _draw_covariates(cfg, rng, positive)
        records.append(PatientRecord(
            id=pid, sex=sex, age_years=round(age, 1), bmi=round(bmi, 1),
            outcome="positive" if positive else "negative", **risk,
        ))
        truth_rows.append((pid, "positive" if positive else "negative", angle, scale))

    save_cohort(records, out / "cohort.csv")
    with open(out / "truth.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,outcome,qrst_angle_deg,amp_scale\n")
        for pid, outcome, angle, scale in truth_rows:
            fh.write(f"{pid},{outcome},{angle!r},{scale!r}\n")

    return {
        "n_patients": cfg.n_patients,
        "n_positive": int(flags.sum()),
        "n_negative": int((~flags).sum()),
        "ecg_dir": str(ecg_dir),
        "fiducial_dir": str(fid_dir),
        "cohort_table": str(out / "cohort.csv"),
        "truth_table": str(out / "truth.csv"),
    }
