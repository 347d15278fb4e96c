"""Evaluation metrics: SDR / NSDR / GNSDR for separation, RPA / RCA / OA for
pitch, following the usual melody-evaluation conventions (50-cent tolerance,
reference-voiced frames for RPA/RCA, voicing decisions included in OA).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError
from .pitch import PitchTrack

CENT_TOLERANCE = 50.0


@dataclass
class SeparationScore:
    sdr: float
    nsdr: float
    length: int


@dataclass
class PitchScore:
    rpa: float
    rca: float
    oa: float


def sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10 * log10(||v||^2 / ||v_hat - v||^2); +inf sentinel on an exact match."""
    reference = np.asarray(reference, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if reference.shape != estimate.shape:
        raise InvalidInputError(f"length mismatch {reference.shape} vs {estimate.shape}")
    ref_energy = float(np.sum(reference ** 2))
    if ref_energy == 0.0:
        raise UndefinedMetricError("SDR is undefined for an all-zero reference")
    err_energy = float(np.sum((estimate - reference) ** 2))
    if err_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(ref_energy / err_energy)


def nsdr(reference: np.ndarray, estimate: np.ndarray, mixture: np.ndarray) -> float:
    """SDR improvement of the estimate over the unprocessed mixture."""
    return sdr(reference, estimate) - sdr(reference, mixture)


def gnsdr(per_song: list[tuple[int, float]]) -> float:
    """Length-weighted mean of per-song NSDRs.

    Non-finite entries (the +inf sentinel) are excluded with a warning.
    """
    if not per_song:
        raise UndefinedMetricError("GNSDR of an empty song list is undefined")
    if any(length <= 0 for length, _ in per_song):
        raise InvalidInputError("song lengths must be positive")
    finite = [(length, value) for length, value in per_song if math.isfinite(value)]
    if len(finite) < len(per_song):
        warnings.warn(f"excluded {len(per_song) - len(finite)} non-finite NSDR value(s) from GNSDR")
    if not finite:
        raise UndefinedMetricError("no finite NSDR values to aggregate")
    total = sum(length for length, _ in finite)
    return sum(length * value for length, value in finite) / total


def _cents_or_zero(frequencies: np.ndarray) -> np.ndarray:
    out = np.zeros_like(frequencies)
    voiced = frequencies > 0
    out[voiced] = 1200.0 * np.log2(frequencies[voiced] / 10.0)
    return out


def _check_tracks(reference: PitchTrack, estimate: PitchTrack):
    if len(reference) != len(estimate):
        raise InvalidInputError(f"frame count mismatch {len(reference)} vs {len(estimate)}")
    if len(reference) == 0:
        raise UndefinedMetricError("metrics are undefined for empty tracks")


def rpa(reference: PitchTrack, estimate: PitchTrack) -> float:
    """Raw pitch accuracy: over reference-voiced frames, the fraction where the
    estimate is voiced and within +/-50 cents."""
    _check_tracks(reference, estimate)
    ref_voiced = reference.voiced
    if not ref_voiced.any():
        raise UndefinedMetricError("RPA is undefined without voiced reference frames")
    ref_cents = _cents_or_zero(reference.frequencies)
    est_cents = _cents_or_zero(estimate.frequencies)
    hit = estimate.voiced & (np.abs(est_cents - ref_cents) <= CENT_TOLERANCE)
    return float(np.sum(hit & ref_voiced) / np.sum(ref_voiced))


def rca(reference: PitchTrack, estimate: PitchTrack) -> float:
    """Raw chroma accuracy: as RPA with the cents error folded to one octave."""
    _check_tracks(reference, estimate)
    ref_voiced = reference.voiced
    if not ref_voiced.any():
        raise UndefinedMetricError("RCA is undefined without voiced reference frames")
    ref_cents = _cents_or_zero(reference.frequencies)
    est_cents = _cents_or_zero(estimate.frequencies)
    folded = np.mod(est_cents - ref_cents + 600.0, 1200.0) - 600.0
    hit = estimate.voiced & (np.abs(folded) <= CENT_TOLERANCE)
    return float(np.sum(hit & ref_voiced) / np.sum(ref_voiced))


def oa(reference: PitchTrack, estimate: PitchTrack) -> float:
    """Overall accuracy over all frames, voicing decisions included: a frame
    counts if both tracks agree it is unvoiced, or both are voiced and the
    pitch is within +/-50 cents."""
    _check_tracks(reference, estimate)
    ref_voiced = reference.voiced
    est_voiced = estimate.voiced
    ref_cents = _cents_or_zero(reference.frequencies)
    est_cents = _cents_or_zero(estimate.frequencies)
    pitch_ok = np.abs(est_cents - ref_cents) <= CENT_TOLERANCE
    correct = (~ref_voiced & ~est_voiced) | (ref_voiced & est_voiced & pitch_ok)
    return float(np.mean(correct))


def pitch_score(reference: PitchTrack, estimate: PitchTrack) -> PitchScore:
    return PitchScore(rpa=rpa(reference, estimate), rca=rca(reference, estimate),
                      oa=oa(reference, estimate))
