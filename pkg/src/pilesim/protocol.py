"""Characterization protocols replayed as seeded Monte Carlo sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import electrical as el
from .geometry import (BendDirection, Bending, Compression, PileShape, Rest,
                       SensorSpec, Strain, StrainAxis, YarnSpec,
                       build_pile_model, deform)
from .network import (OpenCircuit, assemble_network, detect_contacts,
                      equivalent_resistance)

YARN_1 = YarnSpec(diameter_mm=0.4, linear_resistance_ohm_per_cm=5300.0,
                  water_retention=0.6)
YARN_2 = YarnSpec(diameter_mm=0.9, linear_resistance_ohm_per_cm=10.5,
                  water_retention=0.3)
YARN_3 = YarnSpec(diameter_mm=0.2, linear_resistance_ohm_per_cm=582_000.0,
                  water_retention=0.6)

_PRESETS = {
    "S1": (YARN_1, 0.3, PileShape.LOOP),
    "S2": (YARN_1, 0.6, PileShape.LOOP),
    "S3": (YARN_1, 0.9, PileShape.LOOP),
    "S4": (YARN_1, 1.3, PileShape.LOOP),
    "S5": (YARN_2, 0.6, PileShape.LOOP),
    "S6": (YARN_3, 0.6, PileShape.LOOP),
    "S7": (YARN_1, 0.6, PileShape.CUT),
}
PRESET_IDS = tuple(_PRESETS)

PAPER_WEIGHTS_G = tuple(float(w) for w in range(100, 1001, 100))
PAPER_ROD_DIAMETERS_CM = (1.0, 3.0, 5.0)
PAPER_STRAIN_PERCENT = 13.3
PAPER_SPRAY_ML = 5.0


def preset(sample_id: str) -> SensorSpec:
    try:
        yarn, height, shape = _PRESETS[sample_id.upper()]
    except KeyError:
        raise ValueError(f"unknown preset {sample_id!r}; expected one of "
                         f"{', '.join(PRESET_IDS)}") from None
    return SensorSpec(yarn=yarn, pile_height_cm=height, pile_shape=shape)


@dataclass(frozen=True)
class CompressionSweep:
    weights_g: tuple = PAPER_WEIGHTS_G
    indenter_cm: float = 5.0

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights_g)
        if not w:
            raise ValueError("weights_g must be non-empty")
        if any(x < 0 for x in w) or any(b < a for a, b in zip(w, w[1:])):
            raise ValueError("weights_g must be non-negative and ascending")
        object.__setattr__(self, "weights_g", w)

    name = "compression"

    def conditions(self):
        return [(f"{w:g} g", Compression(w, self.indenter_cm)) for w in self.weights_g]


@dataclass(frozen=True)
class BendingSweep:
    diameters_cm: tuple = PAPER_ROD_DIAMETERS_CM
    directions: tuple = (BendDirection.CONVEX, BendDirection.CONCAVE)

    def __post_init__(self):
        if not self.diameters_cm or not self.directions:
            raise ValueError("bending sweep lists must be non-empty")
        object.__setattr__(self, "diameters_cm",
                           tuple(float(d) for d in self.diameters_cm))
        object.__setattr__(self, "directions",
                           tuple(BendDirection(d) for d in self.directions))

    name = "bending"

    def conditions(self):
        return [(f"{d.value} {dia:g} cm", Bending(dia, d))
                for d in self.directions for dia in self.diameters_cm]


@dataclass(frozen=True)
class TensileSweep:
    axes: tuple = (StrainAxis.X, StrainAxis.Y, StrainAxis.BIAS45)
    strain_percent: float = PAPER_STRAIN_PERCENT

    def __post_init__(self):
        if not self.axes:
            raise ValueError("axes must be non-empty")
        object.__setattr__(self, "axes", tuple(StrainAxis(a) for a in self.axes))

    name = "tensile"

    def conditions(self):
        return [(f"{a.value} {self.strain_percent:g}%", Strain(a, self.strain_percent))
                for a in self.axes]


@dataclass(frozen=True)
class HumidityTest:
    sprayed_ml: float = PAPER_SPRAY_ML

    def __post_init__(self):
        if not self.sprayed_ml >= 0:
            raise ValueError("sprayed_ml must be >= 0")

    name = "humidity"

    def conditions(self):
        return [(f"{self.sprayed_ml:g} mL", self.sprayed_ml)]


ProtocolKind = Union[CompressionSweep, BendingSweep, TensileSweep, HumidityTest]


@dataclass(frozen=True)
class Protocol:
    kind: ProtocolKind
    trials: int = 50
    master_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class Row:
    condition: int
    label: str
    mean_response: float
    std_error: float
    snr_db: float
    n: int
    excluded: int = 0


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    condition: int
    label: str
    record: el.MeasurementRecord
    flag: str = ""


@dataclass(frozen=True)
class ProtocolResult:
    sample: str
    protocol: str
    rows: tuple
    records: tuple = field(default=(), repr=False)
    # rest reading per trial: V0 (volts) or C0 (pF)
    baselines: tuple = field(default=(), repr=False)

    def means(self) -> np.ndarray:
        return np.array([r.mean_response for r in self.rows])


def split_seed(master_seed: int, trial: int, condition: int = 0) -> int:
    """Counter-based seed for one (trial, condition) cell.

    Seeds are drawn from ``numpy.random.SeedSequence`` keyed on the triple,
    so adding trials or conditions never shifts the draws of the others.
    """
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                                 int(trial), int(condition)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def measure_resistance(model, spec: SensorSpec) -> float:
    """Equivalent resistance of a (deformed) model; ``inf`` when open."""
    net = assemble_network(model, detect_contacts(model), spec)
    try:
        return equivalent_resistance(net)
    except OpenCircuit:
        return math.inf


def _mechanical_trial(spec, cfg, kind, seed):
    model = build_pile_model(spec, seed)
    r0 = measure_resistance(model, spec)
    v0 = el.divider_voltage(r0, cfg)
    out = []
    for label, state in kind.conditions():
        r = measure_resistance(deform(model, spec, state), spec)
        v = el.divider_voltage(r, cfg)
        flag = ""
        if v0 == 0:
            delta, flag = math.nan, "open_baseline"
        elif math.isinf(r):
            delta, flag = math.nan, "open_circuit"
        else:
            delta = el.normalized_delta(v, v0)
        out.append((label, el.MeasurementRecord(r, v, delta, None, seed), flag))
    return v0, out


def _humidity_trial(spec, cfg, kind, seed):
    model = build_pile_model(spec, seed)
    c0 = el.sensor_capacitance(el.dielectric_state(model, spec, 0.0))
    out = []
    for label, ml in kind.conditions():
        c = el.sensor_capacitance(el.dielectric_state(model, spec, ml))
        out.append((label, el.MeasurementRecord(math.nan, math.nan, math.nan,
                                                c - c0, seed), ""))
    return c0, out


def _run_trial(args):
    spec, cfg, kind, master_seed, t = args
    seed = split_seed(master_seed, t)
    if isinstance(kind, HumidityTest):
        return _humidity_trial(spec, cfg, kind, seed)
    return _mechanical_trial(spec, cfg, kind, seed)


def baseline_noise(baselines: Sequence[float], relative: bool) -> np.ndarray:
    """Deviations of the rest readings from their mean across trials.

    Relative deviations for voltages (matching the normalized response),
    absolute ones for capacitance.  Zero (open-circuit) readings are skipped.
    """
    b = np.asarray(baselines, dtype=float)
    b = b[np.isfinite(b) & (b != 0)]
    if len(b) == 0:
        return b
    return b / b.mean() - 1.0 if relative else b - b.mean()


def _summarize(index: int, label: str, values: Sequence[float],
               noise: np.ndarray) -> Row:
    v = np.asarray(values, dtype=float)
    ok = v[np.isfinite(v)]
    n = len(ok)
    if n == 0:
        return Row(index, label, math.nan, math.nan, math.nan, 0, len(v))
    mean = float(np.mean(ok))
    if n > 1:
        sd = float(np.std(ok, ddof=1))
        sem = sd / math.sqrt(n)
    else:
        sem = math.nan
    try:
        snr = el.snr_db(ok, noise)
    except el.DegenerateBaseline:
        snr = math.nan
    return Row(index, label, mean, sem, snr, n, len(v) - n)


def run_protocol(spec: SensorSpec, cfg: el.ReadoutConfig, p: Protocol,
                 sample: str = "custom", workers: int = 1) -> ProtocolResult:
    """Run ``p.trials`` independent trials and reduce them per condition.

    Every trial builds a fresh model from its own split seed, measures the
    rest baseline and then each condition on that same model.  Trials may
    run in a process pool; the reduction is always in trial order.

    Responses are the normalized voltage change for mechanical sweeps and
    the capacitance change in pF for humidity tests.  Trials whose baseline
    or condition reads open circuit are kept in the records with a flag and
    dropped from that row's statistics.  The row SNR compares the mean
    response magnitude with the trial-to-trial spread of the rest readings
    (see :func:`baseline_noise`), so every row of a run shares one noise floor.
    """
    jobs = [(spec, cfg, p.kind, p.master_seed, t) for t in range(p.trials)]
    if workers > 1 and p.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, jobs))
    else:
        per_trial = [_run_trial(j) for j in jobs]

    humidity = isinstance(p.kind, HumidityTest)
    labels = [c[0] for c in p.kind.conditions()]
    records = []
    columns: list[list[float]] = [[] for _ in labels]
    baselines = tuple(float(b) for b, _ in per_trial)
    noise = baseline_noise(baselines, relative=not humidity)
    for t, (_, trial) in enumerate(per_trial):
        for c, (label, rec, flag) in enumerate(trial):
            records.append(TrialRecord(t, c, label, rec, flag))
            columns[c].append(rec.capacitance_pf if humidity else rec.delta_v_over_v0)
    rows = tuple(_summarize(c, labels[c], columns[c], noise) for c in range(len(labels)))
    return ProtocolResult(sample, p.kind.name, rows, tuple(records), baselines)


def with_density(spec: SensorSpec, piles_per_cm: Optional[float]) -> SensorSpec:
    if piles_per_cm is None:
        return spec
    return replace(spec, stitch_density_per_cm=piles_per_cm)


def paper_suite(trials: int, master_seed: int, piles_per_cm: Optional[float] = None,
                cfg: Optional[el.ReadoutConfig] = None,
                workers: int = 1) -> list[ProtocolResult]:
    """Every sample/protocol pairing of the published characterization."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or el.ReadoutConfig()
    plan = [(s, CompressionSweep()) for s in PRESET_IDS]
    plan.append(("S5", BendingSweep()))
    plan.append(("S2", TensileSweep()))
    plan += [(s, HumidityTest()) for s in ("S2", "S5", "S6", "S7")]
    results = []
    for sample, kind in plan:
        spec = with_density(preset(sample), piles_per_cm)
        results.append(run_protocol(spec, cfg, Protocol(kind, trials, master_seed),
                                    sample=sample, workers=workers))
    return results
