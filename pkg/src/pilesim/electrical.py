"""Divider readout, normalized response, SNR and the humidity capacitance model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import PileModel, PileShape, SensorSpec

WATER_RELATIVE_PERMITTIVITY = 78.0
VACUUM_PERMITTIVITY_F_PER_M = 8.8541878128e-12
CUT_CONNECTIVITY = 0.7
THIN_YARN_MM = 0.3
THIN_YARN_RETENTION = 0.4
THICK_YARN_MM = 0.6


class ZeroBaseline(ZeroDivisionError):
    """Baseline reading is zero, usually an open-circuit baseline."""


class DegenerateBaseline(ValueError):
    """Noise estimate has zero spread or too few samples."""


@dataclass(frozen=True)
class ReadoutConfig:
    v_in: float = 3.3
    r2_ohm: float = 10_000.0
    adc_bits: Optional[int] = None

    def __post_init__(self):
        if not self.v_in > 0:
            raise ValueError("v_in must be > 0")
        if not self.r2_ohm > 0:
            raise ValueError("r2_ohm must be > 0")
        if self.adc_bits is not None and not 8 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must be None or in 8..16")


@dataclass(frozen=True)
class DielectricState:
    plate_area_cm2: float
    plate_gap_cm: float
    effective_rel_permittivity: float
    water_volume_fraction: float = 0.0

    def __post_init__(self):
        if not self.plate_area_cm2 > 0 or not self.plate_gap_cm > 0:
            raise ValueError("plate area and gap must be > 0")
        if not self.effective_rel_permittivity >= 1:
            raise ValueError("effective_rel_permittivity must be >= 1")


@dataclass(frozen=True)
class MeasurementRecord:
    r_eq_ohm: float
    v_out: float
    delta_v_over_v0: float
    capacitance_pf: Optional[float]
    trial_seed: int


def divider_voltage(r1_ohm: float, cfg: ReadoutConfig) -> float:
    """Output of the divider with the sensor as the upper resistor.

    ``r1_ohm = math.inf`` stands for an open circuit and reads 0 V.
    """
    if math.isinf(r1_ohm):
        v = 0.0
    else:
        if r1_ohm < 0:
            raise ValueError("r1_ohm must be >= 0")
        # ratio first: r2 / (r1 + r2) <= 1 survives rounding, so v <= v_in
        v = cfg.v_in * (cfg.r2_ohm / (r1_ohm + cfg.r2_ohm))
    if cfg.adc_bits is not None:
        lsb = cfg.v_in / (2 ** cfg.adc_bits - 1)
        v = min(round(v / lsb) * lsb, cfg.v_in)
    return v


def normalized_delta(v: float, v0: float) -> float:
    if v0 == 0:
        raise ZeroBaseline("baseline voltage is zero")
    return (v - v0) / v0


def snr_db(signal_deltas: Sequence[float], baseline_deltas: Sequence[float]) -> float:
    """20 log10 of mean absolute signal over baseline sample standard deviation."""
    baseline = np.asarray(baseline_deltas, dtype=float)
    if baseline.size < 2:
        raise DegenerateBaseline("need at least two baseline samples")
    sigma = float(np.std(baseline, ddof=1))
    if sigma == 0:
        raise DegenerateBaseline("baseline standard deviation is zero")
    amplitude = float(np.mean(np.abs(np.asarray(signal_deltas, dtype=float))))
    if amplitude == 0:
        return -math.inf
    return 20.0 * math.log10(amplitude / sigma)


def effective_permittivity(spec: SensorSpec, absorbed_fraction: float) -> float:
    phi = absorbed_fraction
    if not 0 <= phi <= 1:
        raise ValueError("absorbed_fraction must be in [0, 1]")
    return phi * WATER_RELATIVE_PERMITTIVITY + (1 - phi) * spec.yarn.dry_relative_permittivity


def penetration(diameter_mm: float) -> float:
    """Share of sprayed water reaching into the pile; thick yarns pack it out."""
    if diameter_mm >= THICK_YARN_MM:
        return min(1.0, THICK_YARN_MM / diameter_mm)
    return 1.0


def retention_multiplier(diameter_mm: float) -> float:
    return THIN_YARN_RETENTION if diameter_mm < THIN_YARN_MM else 1.0


def connectivity(shape: PileShape) -> float:
    return 1.0 if PileShape(shape) is PileShape.LOOP else CUT_CONNECTIVITY


def pile_volume_ml(spec: SensorSpec) -> float:
    return spec.base_width_cm * spec.base_depth_cm * spec.pile_height_cm


def absorbed_fraction(spec: SensorSpec, sprayed_ml: float) -> float:
    if sprayed_ml < 0:
        raise ValueError("sprayed_ml must be >= 0")
    d = spec.yarn.diameter_mm
    held = (sprayed_ml * spec.yarn.water_retention * retention_multiplier(d)
            * penetration(d) * connectivity(spec.pile_shape))
    return min(max(held / pile_volume_ml(spec), 0.0), 1.0)


def sensor_capacitance(state: DielectricState) -> float:
    """Parallel-plate capacitance in pF."""
    area_m2 = state.plate_area_cm2 * 1e-4
    gap_m = state.plate_gap_cm * 1e-2
    farad = VACUUM_PERMITTIVITY_F_PER_M * state.effective_rel_permittivity * area_m2 / gap_m
    return farad * 1e12


def plate_area_cm2(model: PileModel) -> float:
    """Electrode area spanned by the realized pile anchors (one pitch margin)."""
    lo = model.pile_xy.min(axis=0) - model.pitch_cm / 2
    hi = model.pile_xy.max(axis=0) + model.pitch_cm / 2
    return float(np.prod(hi - lo))


def dielectric_state(model: PileModel, spec: SensorSpec,
                     sprayed_ml: float) -> DielectricState:
    phi = absorbed_fraction(spec, sprayed_ml)
    return DielectricState(
        plate_area_cm2=plate_area_cm2(model),
        plate_gap_cm=spec.pile_height_cm,
        effective_rel_permittivity=effective_permittivity(spec, phi),
        water_volume_fraction=phi,
    )
