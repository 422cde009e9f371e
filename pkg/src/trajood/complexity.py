"""Prediction-task complexity: deviation from constant-velocity motion.

For a focal agent the complexity vector is its displacement over the horizon,
expressed in the agent frame at the start time and divided by the distance a
constant-velocity agent would have covered. ``[1, 0]`` is exact
constant-velocity motion.

Time arguments follow the history-length convention: ``t_start`` seconds of
history end at step ``round(t_start / dt) - 1``, so 1.1 s is step 10 and 5.0 s
is step 49 (the homogenized current step).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from trajood import STEP_DT
from trajood.errors import InputError, NumericError
from trajood.homogenize import HomogenizedSample, select_focal_agent
from trajood.scenario import Scenario, Track

DEFAULT_HORIZON = 4.1
MIN_SPEED = 0.1


@dataclass(frozen=True)
class ComplexityVector:
    d_lon: float
    d_lat: float
    t_start: float
    speed_at_start: float
    scenario_id: str = ""
    agent_id: str = ""

    def as_array(self) -> np.ndarray:
        return np.array([self.d_lon, self.d_lat])


def start_step(t_start: float, dt: float = STEP_DT) -> int:
    return int(round(t_start / dt)) - 1


def horizon_steps(horizon: float, dt: float = STEP_DT) -> int:
    return int(round(horizon / dt))


def complexity_vector(track: Track, t_start: float, horizon: float = DEFAULT_HORIZON,
                      min_speed: float = MIN_SPEED) -> ComplexityVector | None:
    """Complexity vector of ``track``; ``None`` when the start speed is below ``min_speed``."""
    i0 = start_step(t_start)
    i1 = i0 + horizon_steps(horizon)
    if i0 < 0 or i1 >= len(track):
        raise InputError(
            f"agent {track.agent_id}: steps [{i0}, {i1}] outside recording of {len(track)} steps",
            code="OUT_OF_RANGE",
        )
    if not (track.observed[i0] and track.observed[i1]):
        raise InputError(f"agent {track.agent_id} unobserved at step {i0} or {i1}", code="NOT_OBSERVED")
    vx, vy = track.velocities[i0]
    speed = math.hypot(vx, vy)
    if speed < min_speed:
        return None
    dx, dy = track.positions[i1] - track.positions[i0]
    theta = float(track.headings[i0])
    c, s = math.cos(theta), math.sin(theta)
    travel = speed * horizon
    return ComplexityVector(
        d_lon=(dx * c + dy * s) / travel,
        d_lat=(-dx * s + dy * c) / travel,
        t_start=t_start,
        speed_at_start=speed,
        agent_id=track.agent_id,
    )


@dataclass
class ComplexityDistribution:
    samples: list[ComplexityVector]
    excluded_low_speed: int
    t_start: float
    horizon: float = DEFAULT_HORIZON
    excluded_other: dict[str, int] = field(default_factory=dict)

    @property
    def excluded(self) -> int:
        return self.excluded_low_speed + sum(self.excluded_other.values())

    def points(self) -> np.ndarray:
        return np.array([[v.d_lon, v.d_lat] for v in self.samples]).reshape(-1, 2)

    def covariance_trace(self) -> float:
        pts = self.points()
        if len(pts) < 2:
            return 0.0
        return float(np.trace(np.cov(pts, rowvar=False)))


def complexity_distribution(samples: Sequence[HomogenizedSample | Scenario], t_start: float,
                            horizon: float = DEFAULT_HORIZON, min_speed: float = MIN_SPEED) -> ComplexityDistribution:
    """Complexity vectors of every sample's focal agent, in input order.

    Samples that cannot be evaluated are counted under ``excluded_other`` by
    error code instead of aborting the batch.
    """
    vectors: list[ComplexityVector] = []
    low_speed = 0
    other: Counter[str] = Counter()
    for item in samples:
        scenario = item.scenario if isinstance(item, HomogenizedSample) else item
        focal = item.focal_agent_id if isinstance(item, HomogenizedSample) else scenario.focal_agent_id
        if focal is None:
            focal = select_focal_agent(scenario)
        track = scenario.track(focal) if focal is not None else None
        if track is None:
            other["NO_FOCAL"] += 1
            continue
        try:
            vec = complexity_vector(track, t_start, horizon, min_speed)
        except InputError as exc:
            other[exc.code] += 1
            continue
        if vec is None:
            low_speed += 1
            continue
        vectors.append(
            ComplexityVector(vec.d_lon, vec.d_lat, vec.t_start, vec.speed_at_start, scenario.scenario_id, focal)
        )
    return ComplexityDistribution(vectors, low_speed, t_start, horizon, dict(sorted(other.items())))


# --------------------------------------------------------------------------
# density estimation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    x: np.ndarray  # (nx,) cell centers
    y: np.ndarray  # (ny,) cell centers
    density: np.ndarray  # (ny, nx)
    bandwidth: tuple[float, float]
    raw_mass: float  # grid mass of the unnormalized estimate

    @property
    def cell_area(self) -> float:
        return float((self.x[1] - self.x[0]) * (self.y[1] - self.y[0]))

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


def scott_bandwidth(points: np.ndarray) -> np.ndarray:
    n = len(points)
    return points.std(axis=0, ddof=1) * n ** (-1.0 / 6.0)


def _gauss(grid: np.ndarray, centers: np.ndarray, h: float) -> np.ndarray:
    z = (grid[:, None] - centers[None, :]) / h
    return np.exp(-0.5 * z * z) / (h * math.sqrt(2.0 * math.pi))


def kde_2d(points, grid_resolution: int = 200, chunk: int = 8192) -> DensityGrid:
    """Product-Gaussian KDE on a regular grid with Scott's-rule bandwidths.

    The grid spans the data range plus a 5% margin per side; densities are
    rescaled so the grid mass is exactly one.
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    if len(pts) < 2:
        raise NumericError(f"need at least 2 points, got {len(pts)}", code="DEGENERATE_DATA")
    if not np.isfinite(pts).all():
        raise NumericError("points contain non-finite values", code="DEGENERATE_DATA")
    h = scott_bandwidth(pts)
    if not (h > 0).all():
        raise NumericError("points have no spread along at least one axis", code="DEGENERATE_DATA")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    margin = 0.05 * (hi - lo)
    xs = np.linspace(lo[0] - margin[0], hi[0] + margin[0], grid_resolution)
    ys = np.linspace(lo[1] - margin[1], hi[1] + margin[1], grid_resolution)
    dens = np.zeros((grid_resolution, grid_resolution))
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        dens += _gauss(ys, block[:, 1], h[1]) @ _gauss(xs, block[:, 0], h[0]).T
    dens /= len(pts)
    area = (xs[1] - xs[0]) * (ys[1] - ys[0])
    raw_mass = float(dens.sum() * area)
    dens /= raw_mass
    return DensityGrid(xs, ys, dens, (float(h[0]), float(h[1])), raw_mass)


def hdr_levels(grid: DensityGrid, masses: Sequence[float] = (0.3, 0.6, 0.9)) -> list[float]:
    """Density thresholds of the highest-density regions enclosing each mass.

    For mass ``m`` the threshold is the largest ``c`` such that cells with
    density ``>= c`` hold at least ``m`` of the grid mass.
    """
    masses = [float(m) for m in masses]
    if any(not 0 < m < 1 for m in masses) or any(b <= a for a, b in zip(masses, masses[1:])):
        raise InputError(f"masses must be strictly increasing in (0, 1), got {masses}")
    flat = np.sort(grid.density.ravel())[::-1]
    cum = np.cumsum(flat)
    cum /= cum[-1]
    levels = []
    for m in masses:
        idx = min(int(np.searchsorted(cum, m, side="left")), len(flat) - 1)
        levels.append(float(flat[idx]))
    return levels


def enclosed_mass(grid: DensityGrid, threshold: float) -> float:
    """Grid mass inside the superlevel set ``density >= threshold``."""
    d = grid.density
    return float(d[d >= threshold].sum() / d.sum())


def density_at(grid: DensityGrid, points) -> np.ndarray:
    """Bilinear interpolation of the grid density; zero outside the grid."""
    pts = np.asarray(points, float).reshape(-1, 2)
    fx = (pts[:, 0] - grid.x[0]) / (grid.x[1] - grid.x[0])
    fy = (pts[:, 1] - grid.y[0]) / (grid.y[1] - grid.y[0])
    nx, ny = len(grid.x), len(grid.y)
    inside = (fx >= 0) & (fx <= nx - 1) & (fy >= 0) & (fy <= ny - 1)
    ix = np.clip(np.floor(fx).astype(int), 0, nx - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, ny - 2)
    tx, ty = np.clip(fx - ix, 0, 1), np.clip(fy - iy, 0, 1)
    d = grid.density
    val = (
        d[iy, ix] * (1 - tx) * (1 - ty)
        + d[iy, ix + 1] * tx * (1 - ty)
        + d[iy + 1, ix] * (1 - tx) * ty
        + d[iy + 1, ix + 1] * tx * ty
    )
    return np.where(inside, val, 0.0)


def empirical_mass(grid: DensityGrid, points, threshold: float) -> float:
    """Fraction of ``points`` falling inside the ``density >= threshold`` region."""
    return float((density_at(grid, points) >= threshold).mean())
