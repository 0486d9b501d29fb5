"""Stochastic pile geometry and the mechanical deformation kinematics.

A sample is a rectangular base carrying a grid of piles.  Tufted rows run
along the y axis; the grid column index ``i`` (along x) identifies the row.
Each loop pile is a single 9-point arc standing in the y-z plane.  Each cut
pile is two straight half-strands rising from the two feet of the former loop.

Models are immutable.  :func:`deform` always works from the rest parameters
stored on the model, so deformation states are absolute, not cumulative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

LOOP_POINTS = 9
CUT_POINTS = 5
# Rest half-width of a loop arc (and half the foot spacing of a cut pile) as
# a fraction of the grid pitch.
LOOP_HALF_WIDTH_FRACTION = 0.4
# Lateral bulge gain: half-width grows by this fraction per unit fractional
# height loss.
BULGE_GAIN = 1.5
TERMINAL_STRIP_CM = 0.25


class GeometryError(ValueError):
    """Invalid geometry input; ``field`` names the offending field when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ZeroArea(GeometryError):
    """The base rounds to an empty pile grid."""


class GeometryUnderflow(GeometryError):
    """A bend would push pile apexes through the bend axis."""


class PileShape(str, enum.Enum):
    LOOP = "loop"
    CUT = "cut"


class BendDirection(str, enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"


class StrainAxis(str, enum.Enum):
    X = "x"
    Y = "y"
    BIAS45 = "bias45"


@dataclass(frozen=True)
class YarnSpec:
    diameter_mm: float
    linear_resistance_ohm_per_cm: float
    dry_relative_permittivity: float = 2.0
    water_retention: float = 0.6

    def __post_init__(self):
        if not self.diameter_mm > 0:
            raise GeometryError("yarn.diameter_mm must be > 0", "yarn.diameter_mm")
        if not self.linear_resistance_ohm_per_cm > 0:
            raise GeometryError("yarn.linear_resistance_ohm_per_cm must be > 0", "yarn.linear_resistance_ohm_per_cm")
        if not self.dry_relative_permittivity >= 1:
            raise GeometryError("yarn.dry_relative_permittivity must be >= 1", "yarn.dry_relative_permittivity")
        if not 0 <= self.water_retention <= 1:
            raise GeometryError("yarn.water_retention must be in [0, 1]", "yarn.water_retention")

    @property
    def diameter_cm(self) -> float:
        return self.diameter_mm / 10.0


@dataclass(frozen=True)
class SensorSpec:
    yarn: YarnSpec
    pile_height_cm: float
    pile_shape: PileShape = PileShape.LOOP
    base_width_cm: float = 5.0
    base_depth_cm: float = 5.0
    stitch_density_per_cm: float = 6.0
    contact_resistance_ohm: float = 50.0
    stiffness_scale: float = 40.0
    stiffness_exponent: float = 2.0
    poisson_ratio: float = 0.30
    position_jitter_cm: float = 0.03
    cut_splay_deg: float = 65.0
    loop_lean_deg: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "pile_shape", PileShape(self.pile_shape))
        for name in ("base_width_cm", "base_depth_cm", "pile_height_cm",
                     "stitch_density_per_cm", "contact_resistance_ohm",
                     "stiffness_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise GeometryError(f"{name} must be > 0, got {value!r}", name)
        if not 0 <= self.poisson_ratio < 0.5:
            raise GeometryError("poisson_ratio must be in [0, 0.5)", "poisson_ratio")
        for name in ("stiffness_exponent", "position_jitter_cm",
                     "cut_splay_deg", "loop_lean_deg"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise GeometryError(f"{name} must be >= 0, got {value!r}", name)
        for name in ("cut_splay_deg", "loop_lean_deg"):
            if getattr(self, name) >= 90:
                raise GeometryError(f"{name} must be < 90 degrees", name)

    @property
    def grid_shape(self) -> tuple[int, int]:
        # whole piles only; the epsilon absorbs float error in width * density
        return (math.floor(self.base_width_cm * self.stitch_density_per_cm + 1e-9),
                math.floor(self.base_depth_cm * self.stitch_density_per_cm + 1e-9))

    @property
    def pile_count(self) -> int:
        nx, ny = self.grid_shape
        return nx * ny

    @property
    def pitch_cm(self) -> float:
        return 1.0 / self.stitch_density_per_cm

    @property
    def stiffness(self) -> float:
        """Per-pile load (g) that halves the pile height."""
        return self.stiffness_scale * self.pile_height_cm ** self.stiffness_exponent


@dataclass(frozen=True)
class Rest:
    pass


@dataclass(frozen=True)
class Compression:
    mass_g: float
    indenter_diameter_cm: float = 5.0

    def __post_init__(self):
        if not self.mass_g >= 0:
            raise GeometryError("mass_g must be >= 0")
        if not self.indenter_diameter_cm > 0:
            raise GeometryError("indenter_diameter_cm must be > 0")


@dataclass(frozen=True)
class Bending:
    rod_diameter_cm: float
    direction: BendDirection

    def __post_init__(self):
        object.__setattr__(self, "direction", BendDirection(self.direction))
        if not self.rod_diameter_cm > 0:
            raise GeometryError("rod_diameter_cm must be > 0")


@dataclass(frozen=True)
class Strain:
    axis: StrainAxis
    strain_percent: float

    def __post_init__(self):
        object.__setattr__(self, "axis", StrainAxis(self.axis))
        if not 0 <= self.strain_percent <= 20:
            raise GeometryError("strain_percent must be in [0, 20]")


DeformationState = Union[Rest, Compression, Bending, Strain]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PileModel:
    """Realized pile geometry.

    ``strands`` is an ``(n_strands, n_points, 3)`` array in cm, so
    ``strands[k]`` is the polyline of strand ``k``.  The per-strand
    rest parameters (``foot_xy``, ``lean``, ``splay_dir``) let :func:`deform`
    regenerate every strand from scratch.  ``terminal_a``/``terminal_b`` are
    ``(m, 2)`` integer arrays of ``(strand, point_index)`` base nodes wired to
    each lead.
    """

    strands: np.ndarray
    strand_pile: np.ndarray
    pile_xy: np.ndarray
    pile_grid: np.ndarray
    foot_xy: np.ndarray
    lean: np.ndarray
    splay_dir: np.ndarray
    shape: PileShape
    pile_height_cm: float
    yarn_radius_cm: float
    pitch_cm: float
    base_size_cm: tuple
    terminal_a: np.ndarray
    terminal_b: np.ndarray
    contact_reach_cm: float
    rng_seed: int
    state: object = field(default_factory=Rest)

    @property
    def n_piles(self) -> int:
        return len(self.pile_xy)

    @property
    def n_strands(self) -> int:
        return len(self.strands)

    @property
    def points_per_strand(self) -> int:
        return self.strands.shape[1]

    def points(self) -> np.ndarray:
        return self.strands.reshape(-1, 3)

    def node_id(self, strand, point):
        """Global vertex index of ``(strand, point)``, as used by the network."""
        return np.asarray(strand) * self.points_per_strand + np.asarray(point)

    def apex_points(self) -> np.ndarray:
        """Highest point of every strand (loop apex or cut tip)."""
        if self.shape is PileShape.LOOP:
            return self.strands[:, LOOP_POINTS // 2]
        return self.strands[:, -1]

    def same_geometry(self, other: "PileModel") -> bool:
        return np.array_equal(self.strands, other.strands)

    def scaled(self, k: float) -> "PileModel":
        """Uniformly scale every length, yarn radius included."""
        return replace(
            self,
            strands=_frozen(self.strands * k),
            pile_xy=_frozen(self.pile_xy * k),
            foot_xy=_frozen(self.foot_xy * k),
            pile_height_cm=self.pile_height_cm * k,
            yarn_radius_cm=self.yarn_radius_cm * k,
            pitch_cm=self.pitch_cm * k,
            base_size_cm=(self.base_size_cm[0] * k, self.base_size_cm[1] * k),
            contact_reach_cm=self.contact_reach_cm * k,
        )


def build_pile_model(spec: SensorSpec, seed: int) -> PileModel:
    nx, ny = spec.grid_shape
    if nx * ny == 0:
        raise ZeroArea(
            f"{spec.base_width_cm} x {spec.base_depth_cm} cm at "
            f"{spec.stitch_density_per_cm} piles/cm holds no piles")
    rng = np.random.default_rng(seed)
    pitch = spec.pitch_cm
    jit = spec.position_jitter_cm

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    grid = np.stack([ii.ravel(), jj.ravel()], axis=1)
    centers = (grid + 0.5) * pitch
    centers = centers + rng.uniform(-jit, jit, size=centers.shape)

    a0 = LOOP_HALF_WIDTH_FRACTION * pitch
    n_piles = len(centers)
    if spec.pile_shape is PileShape.LOOP:
        strand_pile = np.arange(n_piles)
        foot_xy = centers.copy()
        lean_max = math.tan(math.radians(spec.loop_lean_deg))
        lean_mag = rng.uniform(0.0, lean_max, size=n_piles)
        lean_az = rng.uniform(0.0, 2 * math.pi, size=n_piles)
        lean = np.stack([lean_mag * np.cos(lean_az),
                         lean_mag * np.sin(lean_az)], axis=1)
        splay_dir = np.zeros((n_piles, 3))
    else:
        strand_pile = np.repeat(np.arange(n_piles), 2)
        side = np.tile([-1.0, 1.0], n_piles)
        foot_xy = centers[strand_pile] + np.stack(
            [np.zeros_like(side), side * a0], axis=1)
        n = len(strand_pile)
        tilt = np.radians(rng.uniform(0.0, spec.cut_splay_deg, size=n))
        azimuth = rng.uniform(0.0, 2 * math.pi, size=n)
        splay_dir = np.stack([np.sin(tilt) * np.cos(azimuth),
                              np.sin(tilt) * np.sin(azimuth),
                              np.cos(tilt)], axis=1)
        lean = np.zeros((n, 2))

    h = spec.pile_height_cm
    radius = spec.yarn.diameter_cm / 2
    # Two strands can only touch if their anchors are closer than twice the
    # largest lateral excursion a strand can reach, plus a yarn diameter.
    if spec.pile_shape is PileShape.LOOP:
        tilt = math.tan(math.radians(spec.loop_lean_deg))
    else:
        tilt = math.sin(math.radians(spec.cut_splay_deg))
    excursion = (a0 + h * tilt) * (1 + BULGE_GAIN)
    reach = 2 * (excursion + 2 * jit + a0) + 2 * radius

    model = PileModel(
        strands=np.zeros((0, 0, 3)),
        strand_pile=strand_pile,
        pile_xy=_frozen(centers),
        pile_grid=grid,
        foot_xy=_frozen(foot_xy),
        lean=_frozen(lean),
        splay_dir=_frozen(splay_dir),
        shape=spec.pile_shape,
        pile_height_cm=h,
        yarn_radius_cm=radius,
        pitch_cm=pitch,
        base_size_cm=(spec.base_width_cm, spec.base_depth_cm),
        terminal_a=np.zeros((0, 2), dtype=int),
        terminal_b=np.zeros((0, 2), dtype=int),
        contact_reach_cm=reach,
        rng_seed=int(seed),
    )
    strands = _realize(model, np.full(len(strand_pile), h),
                       np.full(len(strand_pile), a0))
    model = replace(model, strands=strands)
    term_a, term_b = _terminal_nodes(model)
    return replace(model, terminal_a=term_a, terminal_b=term_b)


def _loop_arcs(foot: np.ndarray, half_width: np.ndarray, height: np.ndarray,
               lean: np.ndarray) -> np.ndarray:
    theta = np.linspace(math.pi, 0.0, LOOP_POINTS)
    cos, sin = np.cos(theta), np.sin(theta)
    sin[0] = sin[-1] = 0.0
    z = height[:, None] * sin
    y = foot[:, 1:2] + half_width[:, None] * cos + z * lean[:, 1:2]
    x = foot[:, 0:1] + z * lean[:, 0:1]
    return np.stack([x, y, z], axis=2)


def _cut_strands(foot: np.ndarray, direction: np.ndarray, length: float,
                 height_ratio: np.ndarray, bulge: np.ndarray) -> np.ndarray:
    t = np.linspace(0.0, 1.0, CUT_POINTS)[None, :, None]
    d = direction * length
    tip = np.stack([d[:, 0] * bulge, d[:, 1] * bulge, d[:, 2] * height_ratio], axis=1)
    base = np.column_stack([foot, np.zeros(len(foot))])
    return base[:, None, :] + t * tip[:, None, :]


def _realize(model: PileModel, heights: np.ndarray,
             half_widths: np.ndarray) -> np.ndarray:
    """Rest-frame strands for the given per-strand heights and half-widths."""
    a0 = LOOP_HALF_WIDTH_FRACTION * model.pitch_cm
    h0 = model.pile_height_cm
    if model.shape is PileShape.LOOP:
        pts = _loop_arcs(model.foot_xy, half_widths, heights, model.lean)
    else:
        pts = _cut_strands(model.foot_xy, model.splay_dir, h0,
                           heights / h0, half_widths / a0)
    return _frozen(pts)


def _terminal_nodes(model: PileModel) -> tuple[np.ndarray, np.ndarray]:
    depth = model.base_size_cm[1]
    pts = model.strands
    base = pts[:, :, 2] == 0.0
    in_a = base & (pts[:, :, 1] <= TERMINAL_STRIP_CM)
    in_b = base & (pts[:, :, 1] >= depth - TERMINAL_STRIP_CM) & ~in_a
    return np.argwhere(in_a), np.argwhere(in_b)


def compressed_height(spec: SensorSpec, load_per_pile_g: float) -> float:
    """Saturating compaction law: h' = h K / (K + P)."""
    k = spec.stiffness
    return spec.pile_height_cm * k / (k + load_per_pile_g)


def piles_under_indenter(model: PileModel, diameter_cm: float) -> np.ndarray:
    center = np.array(model.base_size_cm) / 2
    r = diameter_cm / 2
    d2 = np.sum((model.pile_xy - center) ** 2, axis=1)
    return d2 <= r * r


def deform(model: PileModel, spec: SensorSpec,
           state: DeformationState) -> PileModel:
    """Apply one absolute deformation state to the rest geometry of ``model``."""
    h0 = model.pile_height_cm
    a0 = LOOP_HALF_WIDTH_FRACTION * model.pitch_cm
    n = model.n_strands
    rest = _realize(model, np.full(n, h0), np.full(n, a0))

    if isinstance(state, Rest):
        return replace(model, strands=rest, state=state)

    if isinstance(state, Compression):
        covered = piles_under_indenter(model, state.indenter_diameter_cm)
        n_cov = int(covered.sum())
        heights = np.full(n, h0)
        widths = np.full(n, a0)
        if n_cov and state.mass_g > 0:
            h1 = compressed_height(spec, state.mass_g / n_cov)
            hit = covered[model.strand_pile]
            heights[hit] = h1
            widths[hit] = a0 * (1 + BULGE_GAIN * (1 - h1 / h0))
        return replace(model, strands=_realize(model, heights, widths),
                       state=state)

    if isinstance(state, Bending):
        r = state.rod_diameter_cm / 2
        flat = bend_points(rest.reshape(-1, 3), r, state.direction, h0,
                           model.base_size_cm[1] / 2)
        return replace(model, strands=_frozen(flat.reshape(rest.shape)),
                       state=state)

    if isinstance(state, Strain):
        f = strain_tensor(state.axis, state.strain_percent / 100,
                          spec.poisson_ratio)
        anchors = model.pile_xy
        center = np.array(model.base_size_cm) / 2
        moved = center + (anchors - center) @ (np.eye(2) + f).T
        shift = np.zeros((model.n_piles, 3))
        shift[:, :2] = moved - anchors
        strands = rest + shift[model.strand_pile][:, None, :]
        return replace(model, strands=_frozen(strands), state=state)

    raise TypeError(f"unknown deformation state {state!r}")


def bend_radius(rod_radius_cm: float, direction: BendDirection,
                pile_height_cm: float) -> float:
    """Radius of the base neutral surface when wrapped on a rod.

    Convex wrapping lays the base on the rod.  Concave wrapping presses the
    pile against the rod, so the base sits one pile height further out.
    """
    if BendDirection(direction) is BendDirection.CONVEX:
        return rod_radius_cm
    return rod_radius_cm + pile_height_cm


def apex_spacing_scale(rod_radius_cm: float, direction: BendDirection,
                       pile_height_cm: float) -> float:
    rb = bend_radius(rod_radius_cm, direction, pile_height_cm)
    if BendDirection(direction) is BendDirection.CONVEX:
        return (rb + pile_height_cm) / rb
    if rb - pile_height_cm <= 0:
        raise GeometryUnderflow("pile apex crosses the bend axis")
    return (rb - pile_height_cm) / rb


def bend_points(points: np.ndarray, rod_radius_cm: float,
                direction: BendDirection, pile_height_cm: float,
                y_center: float, base_radius_cm: float | None = None
                ) -> np.ndarray:
    """Map flat points onto a cylinder whose axis is parallel to x.

    The base arc length (y measured from ``y_center``) is preserved.  A
    point at height z sits at radius ``rb + z`` (convex) or ``rb - z``
    (concave).
    """
    direction = BendDirection(direction)
    rb = (bend_radius(rod_radius_cm, direction, pile_height_cm)
          if base_radius_cm is None else base_radius_cm)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    theta = (y - y_center) / rb
    if direction is BendDirection.CONVEX:
        rho = rb + z
        return np.stack([x, y_center + rho * np.sin(theta),
                         rho * np.cos(theta) - rb], axis=1)
    rho = rb - z
    if np.any(rho <= 0):
        raise GeometryUnderflow(
            f"bend radius {rb:g} cm is not larger than pile height")
    return np.stack([x, y_center + rho * np.sin(theta),
                     rb - rho * np.cos(theta)], axis=1)


def strain_tensor(axis: StrainAxis, strain: float, poisson: float) -> np.ndarray:
    """Small in-plane strain tensor for uniaxial stretch with lateral contraction."""
    axis = StrainAxis(axis)
    if axis is StrainAxis.X:
        n = np.array([1.0, 0.0])
    elif axis is StrainAxis.Y:
        n = np.array([0.0, 1.0])
    else:
        n = np.array([1.0, 1.0]) / math.sqrt(2)
    t = np.array([-n[1], n[0]])
    return strain * np.outer(n, n) - poisson * strain * np.outer(t, t)
