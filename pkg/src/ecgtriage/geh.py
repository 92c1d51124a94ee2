"""Global electrical heterogeneity measures computed from the vectorcardiogram.

Nine outputs: peak and area QRS-T angles, peak and area gradient-vector azimuth
and elevation, peak gradient magnitude (mV), QT vector-magnitude integral and
gradient-area magnitude (both mV*ms).

Axis convention (kept in one place so it can be flipped without touching the
feature math): x points left, y points inferior, z points posterior. Azimuth is
measured in the transverse x-z plane from +x toward +z; elevation is measured
down from the +y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyWindow, MissingFiducial, ZeroVector
from .vcg import Vcg

# azimuth = atan2(AZIMUTH_SIN_AXIS, AZIMUTH_COS_AXIS); elevation from ELEVATION_AXIS
AZIMUTH_COS_AXIS = "x"
AZIMUTH_SIN_AXIS = "z"
ELEVATION_AXIS = "y"


@dataclass(frozen=True)
class SpatialVector:
    """A 3-vector in mV (kind='peak') or mV*ms (kind='area')."""

    x: float
    y: float
    z: float
    kind: str

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def __add__(self, other: "SpatialVector") -> "SpatialVector":
        if self.kind != other.kind:
            raise ValueError("cannot add vectors of different kinds")
        return SpatialVector(self.x + other.x, self.y + other.y, self.z + other.z, self.kind)


class Direction(NamedTuple):
    azimuth_deg: float
    elevation_deg: float
    degenerate: bool


@dataclass(frozen=True)
class GehMeasures:
    peak_qrst_angle_deg: float
    area_qrst_angle_deg: float
    peak_svg_azimuth_deg: float
    area_svg_azimuth_deg: float
    peak_svg_elevation_deg: float
    area_svg_elevation_deg: float
    peak_svg_mv: float
    vm_qti_mvms: float
    svg_mvms: float
    degenerate: tuple[str, ...] = ()

    FIELD_ORDER = (
        "peak_qrst_angle_deg",
        "area_qrst_angle_deg",
        "peak_svg_azimuth_deg",
        "area_svg_azimuth_deg",
        "peak_svg_elevation_deg",
        "area_svg_elevation_deg",
        "peak_svg_mv",
        "vm_qti_mvms",
        "svg_mvms",
    )

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELD_ORDER}


def _check_window(vcg: Vcg, onset: int, offset: int):
    if onset > offset or onset < 0 or offset >= vcg.n_samples:
        raise EmptyWindow(f"window [{onset}, {offset}] invalid for {vcg.n_samples} samples")


def peak_vector(vcg: Vcg, onset: int, offset: int) -> SpatialVector:
    """Vector at the window sample with the largest instantaneous magnitude.

    Ties go to the earliest sample.
    """
    _check_window(vcg, onset, offset)
    sl = slice(onset, offset + 1)
    mag2 = vcg.x[sl] ** 2 + vcg.y[sl] ** 2 + vcg.z[sl] ** 2
    i = onset + int(np.argmax(mag2))
    return SpatialVector(float(vcg.x[i]), float(vcg.y[i]), float(vcg.z[i]), kind="peak")


def area_vector(vcg: Vcg, onset: int, offset: int) -> SpatialVector:
    """Componentwise trapezoidal integral over the window, in mV*ms."""
    _check_window(vcg, onset, offset)
    sl = slice(onset, offset + 1)
    dt_ms = 1000.0 / vcg.sampling_rate_hz
    return SpatialVector(
        float(np.trapezoid(vcg.x[sl], dx=dt_ms)),
        float(np.trapezoid(vcg.y[sl], dx=dt_ms)),
        float(np.trapezoid(vcg.z[sl], dx=dt_ms)),
        kind="area",
    )


def spatial_angle(u: SpatialVector, v: SpatialVector) -> float:
    """Angle between two spatial vectors in degrees, range [0, 180]."""
    mu, mv = u.magnitude, v.magnitude
    if mu == 0.0:
        raise ZeroVector("first vector")
    if mv == 0.0:
        raise ZeroVector("second vector")
    cosine = (u.x * v.x + u.y * v.y + u.z * v.z) / (mu * mv)
    return math.degrees(math.acos(max(-1.0, min(1.0, cosine))))


def azimuth_elevation(v: SpatialVector) -> Direction:
    """Direction angles: azimuth in (-180, 180], elevation in [0, 180].

    On the elevation axis itself the azimuth is undefined; it is reported as
    0.0 with the degenerate flag set instead of raising, so one pathological
    beat cannot abort a cohort run.
    """
    if v.magnitude == 0.0:
        raise ZeroVector("direction of zero vector")
    cos_c = getattr(v, AZIMUTH_COS_AXIS)
    sin_c = getattr(v, AZIMUTH_SIN_AXIS)
    elev_c = getattr(v, ELEVATION_AXIS)
    elevation = math.degrees(math.acos(max(-1.0, min(1.0, elev_c / v.magnitude))))
    if cos_c == 0.0 and sin_c == 0.0:
        return Direction(0.0, elevation, True)
    azimuth = math.degrees(math.atan2(sin_c, cos_c))
    if azimuth <= -180.0:
        azimuth += 360.0
    return Direction(azimuth, elevation, False)


def vector_magnitude_integral(vcg: Vcg, onset: int, offset: int) -> float:
    """Trapezoidal integral of sqrt(x^2+y^2+z^2) over the window, in mV*ms."""
    _check_window(vcg, onset, offset)
    sl = slice(onset, offset + 1)
    mag = np.sqrt(vcg.x[sl] ** 2 + vcg.y[sl] ** 2 + vcg.z[sl] ** 2)
    return float(np.trapezoid(mag, dx=1000.0 / vcg.sampling_rate_hz))


def compute_geh(vcg: Vcg) -> GehMeasures:
    """All nine heterogeneity measures of one vectorcardiogram.

    Windows: depolarization [QRS.onset, QRS.offset]; repolarization
    [QRS.offset, T.offset] (onset at the J point); QT [QRS.onset, T.offset].
    The area gradient vector is the QT area integral and the peak gradient
    vector is the sum of the depolarization and repolarization peak vectors.
    """
    f = vcg.fiducials
    if f.qrs is None or f.t is None:
        raise MissingFiducial("QRS and T landmarks are required")

    qrs_peak = peak_vector(vcg, f.qrs.onset, f.qrs.offset)
    t_peak = peak_vector(vcg, f.qrs.offset, f.t.offset)
    qrs_area = area_vector(vcg, f.qrs.onset, f.qrs.offset)
    t_area = area_vector(vcg, f.qrs.offset, f.t.offset)
    svg_area = area_vector(vcg, f.qrs.onset, f.t.offset)
    svg_peak = qrs_peak + t_peak

    degenerate: list[str] = []

    def named(which, fn, *args):
        try:
            return fn(*args)
        except ZeroVector:
            raise ZeroVector(which) from None

    peak_angle = named("peak QRS-T angle", spatial_angle, qrs_peak, t_peak)
    area_angle = named("area QRS-T angle", spatial_angle, qrs_area, t_area)
    peak_dir = named("peak gradient direction", azimuth_elevation, svg_peak)
    area_dir = named("area gradient direction", azimuth_elevation, svg_area)
    if peak_dir.degenerate:
        degenerate.append("peak_svg_azimuth_deg")
    if area_dir.degenerate:
        degenerate.append("area_svg_azimuth_deg")

    return GehMeasures(
        peak_qrst_angle_deg=peak_angle,
        area_qrst_angle_deg=area_angle,
        peak_svg_azimuth_deg=peak_dir.azimuth_deg,
        area_svg_azimuth_deg=area_dir.azimuth_deg,
        peak_svg_elevation_deg=peak_dir.elevation_deg,
        area_svg_elevation_deg=area_dir.elevation_deg,
        peak_svg_mv=svg_peak.magnitude,
        vm_qti_mvms=vector_magnitude_integral(vcg, f.qrs.onset, f.t.offset),
        svg_mvms=svg_area.magnitude,
        degenerate=tuple(degenerate),
    )
