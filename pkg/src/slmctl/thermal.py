"""Surrogate thermal plant for single-layer laser scanning.

Explicit finite-difference transient conduction on a uniform Cartesian grid,
heated by a Gaussian volumetric laser source.  The top surface sits at z = 0
and material fills z <= 0.  Units follow the process conventions used across
the package: lengths in mm at the API (µm for cell size and beam geometry),
powers in W, temperatures in K, time in s.

Grid layout: ``temperatures[i, j, k]`` is the cell centred at
``x = (i + 0.5) h``, ``y = (j + 0.5) h``, ``z = -(k + 0.5) h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import erf

MM = 1e-3
UM = 1e-6

_SQRT3 = math.sqrt(3.0)


class PlantError(RuntimeError):
    """Raised when the plant is driven outside its valid envelope."""


@dataclass(frozen=True)
class MaterialParams:
    density: float = 8440.0  # kg/m^3
    specific_heat: float = 620.0  # J/(kg K)
    conductivity: float = 20.0  # W/(m K)
    melt_temp: float = 1563.0  # K
    ambient_temp: float = 353.0  # K

    def __post_init__(self):
        for name in ("density", "specific_heat", "conductivity", "melt_temp", "ambient_temp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.melt_temp <= self.ambient_temp:
            raise ValueError("melt_temp must exceed ambient_temp")

    @property
    def diffusivity(self) -> float:
        return self.conductivity / (self.density * self.specific_heat)

    @property
    def volumetric_heat(self) -> float:
        return self.density * self.specific_heat


@dataclass(frozen=True)
class LaserParams:
    absorptivity: float = 0.4
    beam_radius: float = 50.0  # µm
    penetration_depth: float = 3.0  # µm

    def __post_init__(self):
        if not 0 < self.absorptivity <= 1:
            raise ValueError("absorptivity must lie in (0, 1]")
        if self.beam_radius <= 0 or self.penetration_depth <= 0:
            raise ValueError("beam_radius and penetration_depth must be positive")


@dataclass
class ThermalField:
    cell_size: float  # µm
    extents: tuple[float, float, float]  # mm, (x, y, depth)
    temperatures: np.ndarray  # K, shape (nx, ny, nz)

    def __post_init__(self):
        shape = grid_shape(self.extents, self.cell_size)
        if self.temperatures.shape != shape:
            raise ValueError(f"temperature array {self.temperatures.shape} does not match grid {shape}")

    @classmethod
    def uniform(cls, extents, cell_size: float, temperature: float) -> "ThermalField":
        extents = tuple(float(e) for e in extents)
        return cls(cell_size, extents, np.full(grid_shape(extents, cell_size), float(temperature)))

    @property
    def h(self) -> float:
        """Cell size in metres."""
        return self.cell_size * UM

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.temperatures.shape

    def copy(self) -> "ThermalField":
        return ThermalField(self.cell_size, self.extents, self.temperatures.copy())

    def enthalpy(self, material: MaterialParams) -> float:
        """Total sensible enthalpy sum(rho c_p T V) in J."""
        return float(material.volumetric_heat * self.h**3 * self.temperatures.sum())

    def contains(self, x_mm: float, y_mm: float) -> bool:
        return 0.0 <= x_mm <= self.extents[0] and 0.0 <= y_mm <= self.extents[1]


def grid_shape(extents, cell_size: float) -> tuple[int, int, int]:
    h_mm = cell_size * UM / MM
    shape = []
    for e in extents:
        n = e / h_mm
        if abs(n - round(n)) > 1e-6 or round(n) < 2:
            raise ValueError(f"extent {e} mm is not a multiple (>= 2) of the {cell_size} µm cell size")
        shape.append(int(round(n)))
    return tuple(shape)


@dataclass(frozen=True)
class BeamState:
    position: tuple[float, float]  # mm
    direction: tuple[float, float]
    power: float  # W
    speed: float  # mm/s

    def __post_init__(self):
        norm = math.hypot(*self.direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("beam direction must be a unit vector")
        if self.power < 0:
            raise ValueError("beam power must be non-negative")
        if self.speed <= 0:
            raise ValueError("beam speed must be positive")

    def advanced(self, distance_mm: float) -> "BeamState":
        x, y = self.position
        dx, dy = self.direction
        return replace(self, position=(x + distance_mm * dx, y + distance_mm * dy))


@dataclass(frozen=True)
class StepRecord:
    step: int
    time: float  # s
    x: float  # mm
    y: float  # mm
    power: float  # W
    speed: float  # mm/s
    melt_area: float  # mm^2
    lookahead_temp: float  # K
    clamped: bool = False
    extra: dict = field(default_factory=dict, compare=False)


def heat_source_eval(dx, dy, dz, power: float, laser: LaserParams):
    """Gaussian volumetric heat source in W/m^3; distances in metres."""
    r = laser.beam_radius * UM
    c = laser.penetration_depth * UM
    peak = 6.0 * _SQRT3 * laser.absorptivity * power / (r * r * c * math.pi * math.sqrt(math.pi))
    dx, dy, dz = np.asarray(dx, float), np.asarray(dy, float), np.asarray(dz, float)
    val = peak * np.exp(-3.0 * ((dx / r) ** 2 + (dy / r) ** 2 + (dz / c) ** 2))
    return float(val) if val.ndim == 0 else val


def _cell_weights(edges: np.ndarray, centre: float, width: float) -> np.ndarray:
    # mean of exp(-3 (s - centre)^2 / width^2) over each cell [edges[i], edges[i+1]]
    u = _SQRT3 * (edges - centre) / width
    integral = width * math.sqrt(math.pi / 3.0) / 2.0 * np.diff(erf(u))
    return integral / np.diff(edges)


def source_field(field: ThermalField, position, power: float, laser: LaserParams):
    """Cell-averaged heat source (W/m^3) as a sparse box.

    Point sampling cannot resolve a 3 µm penetration depth on a 40 µm grid,
    so the Gaussian is integrated exactly over each cell.  Returns
    ``(slices, values)`` covering the cells within 5 beam radii of the spot.
    """
    h = field.h
    nx, ny, nz = field.shape
    r = laser.beam_radius * UM
    c = laser.penetration_depth * UM
    x0, y0 = position[0] * MM, position[1] * MM
    reach = 5.0 * r
    i0, i1 = max(0, int((x0 - reach) / h)), min(nx, int((x0 + reach) / h) + 2)
    j0, j1 = max(0, int((y0 - reach) / h)), min(ny, int((y0 + reach) / h) + 2)
    k1 = min(nz, int(5.0 * c / h) + 2)
    if i0 >= i1 or j0 >= j1:
        return None
    wx = _cell_weights(np.arange(i0, i1 + 1) * h, x0, r)
    wy = _cell_weights(np.arange(j0, j1 + 1) * h, y0, r)
    wz = _cell_weights(-np.arange(0, k1 + 1) * h, 0.0, c)
    peak = heat_source_eval(0.0, 0.0, 0.0, power, laser)
    values = peak * wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
    return (slice(i0, i1), slice(j0, j1), slice(0, k1)), values


def deposited_power(field: ThermalField, position, power: float, laser: LaserParams) -> float:
    """Discrete source sum over the grid, in W."""
    src = source_field(field, position, power, laser)
    if src is None:
        return 0.0
    return float(src[1].sum() * field.h**3)


def stable_substeps(dt: float, cell_size_um: float, material: MaterialParams) -> int:
    h = cell_size_um * UM
    limit = 0.9 * h * h / (6.0 * material.diffusivity)
    return max(1, math.ceil(dt / limit - 1e-12))


def _laplacian_sum(T: np.ndarray, ambient: float, boundary: str) -> np.ndarray:
    # sum of the six neighbours minus 6 T; ghosts: top always mirrored,
    # sides/bottom mirrored ("insulated") or held at ambient ("dirichlet")
    out = -6.0 * T
    out[1:] += T[:-1]
    out[:-1] += T[1:]
    out[:, 1:] += T[:, :-1]
    out[:, :-1] += T[:, 1:]
    out[:, :, 1:] += T[:, :, :-1]
    out[:, :, :-1] += T[:, :, 1:]
    out[:, :, 0] += T[:, :, 0]
    if boundary == "insulated":
        out[0] += T[0]
        out[-1] += T[-1]
        out[:, 0] += T[:, 0]
        out[:, -1] += T[:, -1]
        out[:, :, -1] += T[:, :, -1]
    elif boundary == "dirichlet":
        out[0] += ambient
        out[-1] += ambient
        out[:, 0] += ambient
        out[:, -1] += ambient
        out[:, :, -1] += ambient
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    return out


def thermal_step(
    field: ThermalField,
    beam: BeamState,
    dt: float,
    material: MaterialParams,
    laser: LaserParams,
    boundary: str = "dirichlet",
    travel: Optional[float] = None,
) -> ThermalField:
    """Advance the field by ``dt`` seconds while the beam moves ``travel`` mm.

    ``travel`` defaults to ``speed * dt``.  The source is applied at the beam
    position at the midpoint of each conduction substep.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if travel is None:
        travel = beam.speed * dt
    end = beam.advanced(travel)
    if not (field.contains(*beam.position) and field.contains(*end.position)):
        raise PlantError(f"beam path {beam.position} -> {end.position} leaves the domain")

    n_sub = stable_substeps(dt, field.cell_size, material)
    sub_dt = dt / n_sub
    h = field.h
    coef = material.diffusivity * sub_dt / (h * h)
    heat = sub_dt / material.volumetric_heat
    T = field.temperatures.copy()
    for s in range(n_sub):
        lap = _laplacian_sum(T, material.ambient_temp, boundary)
        T += coef * lap
        if beam.power > 0:
            src = source_field(field, beam.advanced(travel * (s + 0.5) / n_sub).position, beam.power, laser)
            if src is not None:
                T[src[0]] += heat * src[1]
    if not np.isfinite(T).all():
        raise PlantError("non-finite temperature after step")
    return ThermalField(field.cell_size, field.extents, T)


# -- sensors -----------------------------------------------------------------


def _square_fraction(f00: float, f10: float, f11: float, f01: float) -> float:
    """Area fraction of {f >= 0} in a unit square from corner values.

    Corners are visited counter-clockwise; edge crossings are placed by linear
    interpolation and the clipped polygon area comes from the shoelace formula.
    """
    corners = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
    vals = (f00, f10, f11, f01)
    pts = []
    for i in range(4):
        a, b = vals[i], vals[(i + 1) % 4]
        pa, pb = corners[i], corners[(i + 1) % 4]
        if a >= 0:
            pts.append(pa)
        if (a >= 0) != (b >= 0):
            t = a / (a - b)
            pts.append((pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])))
    if len(pts) < 3:
        return 0.0
    s = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        s += x0 * y1 - x1 * y0
    return 0.5 * abs(s)


def level_set_area(values: np.ndarray, threshold: float, spacing: float) -> float:
    """Area of ``values >= threshold`` on a 2-D grid of nodes ``spacing`` apart.

    Marching-squares area fractions with linear interpolation along edges.
    """
    f = np.asarray(values, float) - threshold
    if f.ndim != 2 or min(f.shape) < 2:
        raise ValueError("need a 2-D grid with at least 2 nodes per axis")
    c00, c10, c11, c01 = f[:-1, :-1], f[1:, :-1], f[1:, 1:], f[:-1, 1:]
    pos = (c00 >= 0).astype(int) + (c10 >= 0) + (c11 >= 0) + (c01 >= 0)
    total = float(np.count_nonzero(pos == 4))
    for i, j in zip(*np.nonzero((pos > 0) & (pos < 4))):
        total += _square_fraction(c00[i, j], c10[i, j], c11[i, j], c01[i, j])
    return total * spacing * spacing


def melt_area(field: ThermalField, beam: BeamState, melt_temp: float) -> float:
    """Transverse melt-pool cross-section (mm^2) in the plane through the beam
    centre perpendicular to the scan direction.  Scan must be along +-x."""
    if abs(beam.direction[1]) > 1e-12:
        raise ValueError("transverse cut requires a scan direction along x")
    h_mm = field.cell_size * UM / MM
    nx = field.shape[0]
    s = beam.position[0] / h_mm - 0.5
    i = min(max(int(math.floor(s)), 0), nx - 2)
    t = min(max(s - i, 0.0), 1.0)
    plane = (1 - t) * field.temperatures[i] + t * field.temperatures[i + 1]  # (ny, nz)
    # surface row at z = 0 copies the top cell (adiabatic top)
    plane = np.concatenate([plane[:, :1], plane], axis=1)
    if plane.max() < melt_temp:
        return 0.0
    # the first node spacing in z is half a cell: stretch it onto the uniform grid
    area = level_set_area(plane[:, 1:], melt_temp, h_mm)
    top = level_set_area(plane[:, :2], melt_temp, h_mm) * 0.5
    return area + top


def melt_surface_area(field: ThermalField, melt_temp: float) -> float:
    """Molten area (mm^2) on the top surface."""
    top = field.temperatures[:, :, 0]
    if top.max() < melt_temp:
        return 0.0
    return level_set_area(top, melt_temp, field.cell_size * UM / MM)


def lookahead_point(beam: BeamState, dt: float, laser: LaserParams) -> tuple[float, float]:
    ahead = beam.speed * dt + laser.beam_radius * UM / MM
    return (beam.position[0] + ahead * beam.direction[0], beam.position[1] + ahead * beam.direction[1])


def sample_surface(field: ThermalField, x_mm: float, y_mm: float) -> tuple[float, bool]:
    """Bilinear interpolation of the top-surface temperature; returns (T, clamped)."""
    h_mm = field.cell_size * UM / MM
    nx, ny, _ = field.shape
    top = field.temperatures[:, :, 0]
    sx, sy = x_mm / h_mm - 0.5, y_mm / h_mm - 0.5
    clamped = not (0.0 <= sx <= nx - 1 and 0.0 <= sy <= ny - 1)
    sx, sy = min(max(sx, 0.0), nx - 1.0), min(max(sy, 0.0), ny - 1.0)
    i, j = min(int(sx), nx - 2), min(int(sy), ny - 2)
    tx, ty = sx - i, sy - j
    val = (
        (1 - tx) * (1 - ty) * top[i, j]
        + tx * (1 - ty) * top[i + 1, j]
        + tx * ty * top[i + 1, j + 1]
        + (1 - tx) * ty * top[i, j + 1]
    )
    return float(val), clamped


def lookahead_temp(field: ThermalField, beam: BeamState, dt: float, laser: LaserParams) -> tuple[float, bool]:
    """Surface temperature one step plus one beam radius ahead of the spot."""
    return sample_surface(field, *lookahead_point(beam, dt, laser))


# -- scan driver ---------------------------------------------------------------

AREA_SENSORS = ("surface", "transverse")


@dataclass(frozen=True)
class SimConfig:
    cell_size: float = 40.0  # µm
    margin_x: float = 1.0  # mm beyond the track ends
    margin_y: float = 0.65  # mm beside the outer tracks
    depth: float = 0.8  # mm
    boundary: str = "dirichlet"
    area_sensor: str = "surface"
    power_bounds: tuple = (0.0, 350.0)
    speed_bounds: tuple = (400.0, 1200.0)
    material: MaterialParams = MaterialParams()
    laser: LaserParams = LaserParams()

    def __post_init__(self):
        if self.area_sensor not in AREA_SENSORS:
            raise ValueError(f"area_sensor must be one of {AREA_SENSORS}")
        if self.boundary not in ("dirichlet", "insulated"):
            raise ValueError("boundary must be 'dirichlet' or 'insulated'")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "material" in d:
            d["material"] = MaterialParams(**d["material"])
        if "laser" in d:
            d["laser"] = LaserParams(**d["laser"])
        for k in ("power_bounds", "speed_bounds"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class ScanAborted(RuntimeError):
    """Controller failure mid-scan; ``records`` holds the partial log."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def _snap_up(length_mm: float, cell_mm: float) -> float:
    n = math.ceil(length_mm / cell_mm - 1e-9)
    return n * cell_mm


def scan_domain(plan, cfg: SimConfig):
    """Domain extents (mm) and the part-to-domain offset for a plan."""
    h_mm = cfg.cell_size * UM / MM
    x0, x1, y0, y1 = plan.bounding_box()
    reach = 5.0 * cfg.laser.beam_radius * UM / MM
    if min(cfg.margin_x, cfg.margin_y) < reach:
        raise ValueError(f"domain margin must be at least 5 beam radii ({reach} mm)")
    ext = (
        _snap_up(x1 - x0 + 2 * cfg.margin_x, h_mm),
        _snap_up(y1 - y0 + 2 * cfg.margin_y, h_mm),
        _snap_up(cfg.depth, h_mm),
    )
    return ext, (cfg.margin_x - x0, cfg.margin_y - y0)


def measure_area(field: ThermalField, beam: BeamState, cfg: SimConfig) -> float:
    if cfg.area_sensor == "surface":
        return melt_surface_area(field, cfg.material.melt_temp)
    return melt_area(field, beam, cfg.material.melt_temp)


def _command(result):
    if hasattr(result, "power"):
        tele = result.telemetry() if hasattr(result, "telemetry") else {}
        return float(result.power), float(result.speed), tele
    p, v = result[:2]
    return float(p), float(v), {}


def run_scan(plan, controller: Optional[Callable] = None, sim_config: SimConfig = SimConfig(), field_out=None):
    """Step the plant through every track of ``plan`` at its sample period.

    At each step the area and lookahead temperature are measured, then the
    command comes from ``controller(k, area, temp)`` if given (clamped to the
    configured bounds) or from the plan waveforms.  Returns the StepRecord log;
    positions in the log are in domain coordinates.
    """
    cfg = sim_config
    dt = plan.sample_period
    extents, (ox, oy) = scan_domain(plan, cfg)
    field = ThermalField.uniform(extents, cfg.cell_size, cfg.material.ambient_temp)
    p_lo, p_hi = cfg.power_bounds
    v_lo, v_hi = cfg.speed_bounds
    records: list[StepRecord] = []
    k = 0
    for (sx, sy), (ex, ey) in plan.tracks:
        length = abs(ex - sx)
        direction = (math.copysign(1.0, ex - sx), 0.0)
        beam = BeamState((sx + ox, sy + oy), direction, 0.0, max(plan.speed(0.0), v_lo, 1e-9))
        remaining = length
        while remaining > 1e-9:
            t = k * dt
            area = measure_area(field, beam, cfg)
            temp, clamped = lookahead_temp(field, beam, dt, cfg.laser)
            tele = {}
            if controller is None:
                p, v = plan.power(t), plan.speed(t)
            else:
                try:
                    p, v, tele = _command(controller(k, area, temp))
                except Exception as exc:
                    raise ScanAborted(f"controller failed at step {k}: {exc}", records) from exc
            p = min(max(p, p_lo), p_hi)
            v = min(max(v, v_lo), v_hi)
            beam = replace(beam, power=p, speed=v)
            records.append(StepRecord(k, t, beam.position[0], beam.position[1], p, v, area, temp, clamped, tele))
            travel = min(v * dt, remaining)
            field = thermal_step(field, beam, dt, cfg.material, cfg.laser, cfg.boundary, travel)
            beam = beam.advanced(travel)
            remaining -= travel
            k += 1
    if field_out is not None:
        field_out.append(field)
    return records
