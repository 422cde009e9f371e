"""Canonical in-memory scenario model.

Tracks store their per-step states column-wise (positions, headings,
velocities, observed flags) as read-only numpy arrays; :class:`AgentState`
is the row view returned by :func:`state_at`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from trajood import SAMPLING_RATE
from trajood.errors import InputError


class AgentKind(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    OTHER = "other"


class MapKind(str, Enum):
    LANE_CENTER = "lane_center"
    CROSSWALK = "crosswalk"
    LANE_BOUNDARY = "lane_boundary"
    OTHER = "other"


class SourceProfile(str, Enum):
    A2 = "A2"
    WO = "WO"
    SYNTHETIC = "synthetic"


def wrap_angle(angle):
    """Wrap angles into (-pi, pi]; in-range values are returned bit-for-bit."""
    a = np.asarray(angle, dtype=float)
    inside = (a > -np.pi) & (a <= np.pi)
    wrapped = np.where(inside, a, np.pi - np.mod(np.pi - a, 2.0 * np.pi))
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def _frozen_array(values, shape_tail: tuple[int, ...], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise InputError(f"expected array of shape (N, {shape_tail}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float
    velocity: tuple[float, float]
    observed: bool = True

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True, eq=False)
class Track:
    agent_id: str
    agent_kind: AgentKind
    is_ego: bool
    positions: np.ndarray  # (T, 2)
    headings: np.ndarray  # (T,)
    velocities: np.ndarray  # (T, 2)
    observed: np.ndarray  # (T,) bool

    def __post_init__(self):
        object.__setattr__(self, "agent_id", str(self.agent_id))
        object.__setattr__(self, "agent_kind", AgentKind(self.agent_kind))
        object.__setattr__(self, "positions", _frozen_array(self.positions, (2,)))
        object.__setattr__(self, "velocities", _frozen_array(self.velocities, (2,)))
        object.__setattr__(self, "headings", _frozen_array(self.headings, ()))
        object.__setattr__(self, "observed", _frozen_array(self.observed, (), dtype=bool))
        n = len(self.positions)
        if not (len(self.velocities) == len(self.headings) == len(self.observed) == n):
            raise InputError(f"track {self.agent_id}: state columns differ in length")

    @classmethod
    def from_states(cls, agent_id, agent_kind, is_ego, states) -> Track:
        states = list(states)
        return cls(
            agent_id=agent_id,
            agent_kind=agent_kind,
            is_ego=is_ego,
            positions=[s.position for s in states],
            headings=[s.heading for s in states],
            velocities=[s.velocity for s in states],
            observed=[s.observed for s in states],
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.agent_kind == other.agent_kind
            and self.is_ego == other.is_ego
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.headings, other.headings)
            and np.array_equal(self.velocities, other.velocities)
            and np.array_equal(self.observed, other.observed)
        )

    __hash__ = None

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())

    def sliced(self, start: int, stop: int) -> Track:
        return replace(
            self,
            positions=self.positions[start:stop],
            headings=self.headings[start:stop],
            velocities=self.velocities[start:stop],
            observed=self.observed[start:stop],
        )


@dataclass(frozen=True, eq=False)
class MapElement:
    element_id: str
    kind: MapKind
    polyline: np.ndarray  # (N, 2)

    def __post_init__(self):
        object.__setattr__(self, "element_id", str(self.element_id))
        object.__setattr__(self, "kind", MapKind(self.kind))
        object.__setattr__(self, "polyline", _frozen_array(self.polyline, (2,)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapElement):
            return NotImplemented
        return (
            self.element_id == other.element_id
            and self.kind == other.kind
            and np.array_equal(self.polyline, other.polyline)
        )

    __hash__ = None


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    source_profile: SourceProfile
    step_count: int
    tracks: tuple[Track, ...]
    map_elements: tuple[MapElement, ...] = ()
    focal_agent_id: str | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    sampling_rate: float = SAMPLING_RATE

    def __post_init__(self):
        object.__setattr__(self, "scenario_id", str(self.scenario_id))
        object.__setattr__(self, "source_profile", SourceProfile(self.source_profile))
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "map_elements", tuple(self.map_elements))

    def track(self, agent_id: str) -> Track | None:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        return None

    @property
    def ego(self) -> Track | None:
        for t in self.tracks:
            if t.is_ego:
                return t
        return None


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    agent_id: str | None = None
    element_id: str | None = None
    step: int | None = None

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def _first_bad(mask: np.ndarray) -> int | None:
    if not mask.any():
        return None
    return int(np.argmax(mask))


def validate_scenario(s: Scenario) -> list[Violation]:
    """Return every structural violation found in ``s``; empty means valid."""
    report: list[Violation] = []
    if s.sampling_rate != SAMPLING_RATE:
        report.append(Violation("BAD_SAMPLING_RATE", f"sampling rate {s.sampling_rate} Hz != 10 Hz"))
    if s.step_count < 1:
        report.append(Violation("BAD_STEP_COUNT", f"step_count {s.step_count} < 1"))

    seen: set[str] = set()
    egos = 0
    for t in s.tracks:
        aid = t.agent_id
        if aid in seen:
            report.append(Violation("DUPLICATE_AGENT_ID", f"agent {aid} appears twice", agent_id=aid))
        seen.add(aid)
        egos += bool(t.is_ego)
        if len(t) != s.step_count:
            report.append(
                Violation(
                    "STEP_COUNT_MISMATCH",
                    f"agent {aid} has {len(t)} states, scenario has {s.step_count}",
                    agent_id=aid,
                )
            )
        h = t.headings
        if np.isfinite(t.positions).all() and np.isfinite(t.velocities).all() and h.size and (
            -np.pi < h.min() and h.max() <= np.pi
        ):
            continue  # fast path: every state is finite and in range
        step = _first_bad(~np.isfinite(t.positions).all(axis=1))
        if step is not None:
            report.append(Violation("NON_FINITE_POSITION", f"agent {aid} step {step}", agent_id=aid, step=step))
        step = _first_bad(~np.isfinite(t.velocities).all(axis=1))
        if step is not None:
            report.append(Violation("NON_FINITE_VELOCITY", f"agent {aid} step {step}", agent_id=aid, step=step))
        finite_heading = np.isfinite(h)
        step = _first_bad(~finite_heading)
        if step is not None:
            report.append(Violation("NON_FINITE_HEADING", f"agent {aid} step {step}", agent_id=aid, step=step))
        with np.errstate(invalid="ignore"):
            out = finite_heading & ((h <= -np.pi) | (h > np.pi))
        step = _first_bad(out)
        if step is not None:
            report.append(
                Violation(
                    "HEADING_OUT_OF_RANGE",
                    f"agent {aid} step {step} heading {t.headings[step]!r} not in (-pi, pi]",
                    agent_id=aid,
                    step=step,
                )
            )
    if egos > 1:
        report.append(Violation("MULTIPLE_EGO", f"{egos} tracks flagged as ego"))

    for m in s.map_elements:
        if len(m.polyline) < 2:
            report.append(
                Violation("SHORT_POLYLINE", f"map element {m.element_id} has {len(m.polyline)} points", element_id=m.element_id)
            )
        if not np.isfinite(m.polyline).all():
            report.append(Violation("NON_FINITE_MAP_POINT", f"map element {m.element_id}", element_id=m.element_id))

    if s.focal_agent_id is not None and s.focal_agent_id not in seen:
        report.append(
            Violation("UNKNOWN_FOCAL_AGENT", f"focal agent {s.focal_agent_id} has no track", agent_id=s.focal_agent_id)
        )
    return report


def state_at(track: Track, step: int) -> AgentState:
    if not 0 <= step < len(track):
        raise InputError(f"step {step} outside [0, {len(track)}) for agent {track.agent_id}", code="OUT_OF_RANGE")
    px, py = track.positions[step]
    vx, vy = track.velocities[step]
    return AgentState(
        position=(float(px), float(py)),
        heading=float(track.headings[step]),
        velocity=(float(vx), float(vy)),
        observed=bool(track.observed[step]),
    )
