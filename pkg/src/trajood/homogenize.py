"""Re-slice scenarios from different sources into one common prediction task.

Homogenized samples are 91 steps at 10 Hz: a 50-step history ending at the
current step 49 and a 41-step (4.1 s) future. Only lane centers and
crosswalks survive map filtering, and a single fully observed, non-ego focal
agent is designated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from trajood import CURRENT_STEP, HOMOGENIZED_STEPS
from trajood.errors import InputError
from trajood.scenario import MapElement, MapKind, Scenario, SourceProfile

A2_STEPS = 110
KEPT_MAP_KINDS = frozenset({MapKind.LANE_CENTER, MapKind.CROSSWALK})
# metadata keys carrying junction labels; dropped with the map filter
JUNCTION_KEYS = ("junction_lane_ids", "junction_labels")


class RejectionReason(str, Enum):
    NO_VALID_FOCAL = "NO_VALID_FOCAL"
    TOO_SHORT = "TOO_SHORT"
    INVALID_SOURCE = "INVALID_SOURCE"


@dataclass(frozen=True)
class HomogenizedSample:
    scenario: Scenario
    focal_agent_id: str
    current_step: int = CURRENT_STEP

    @property
    def history_steps(self) -> range:
        return range(0, self.current_step + 1)

    @property
    def future_steps(self) -> range:
        return range(self.current_step + 1, self.scenario.step_count)

    @property
    def focal_track(self):
        return self.scenario.track(self.focal_agent_id)

    @classmethod
    def from_scenario(cls, s: Scenario) -> HomogenizedSample:
        """Wrap an already homogenized scenario (e.g. read back from disk)."""
        problems = check_homogenized(s)
        if problems:
            raise InputError(f"scenario {s.scenario_id} is not homogenized: " + "; ".join(problems))
        return cls(scenario=s, focal_agent_id=s.focal_agent_id)


def check_homogenized(s: Scenario) -> list[str]:
    """Invariant violations of a homogenized scenario (empty when valid)."""
    problems = []
    if s.step_count != HOMOGENIZED_STEPS:
        problems.append(f"step_count {s.step_count} != {HOMOGENIZED_STEPS}")
    focal = s.track(s.focal_agent_id) if s.focal_agent_id is not None else None
    if focal is None:
        problems.append("no focal agent")
    else:
        if focal.is_ego:
            problems.append(f"focal agent {focal.agent_id} is the ego")
        if not focal.fully_observed:
            problems.append(f"focal agent {focal.agent_id} is not fully observed")
    bad = sorted({m.kind.value for m in s.map_elements if m.kind not in KEPT_MAP_KINDS})
    if bad:
        problems.append(f"map kinds {bad} not allowed")
    return problems


def filter_map(elements) -> list[MapElement]:
    return [m for m in elements if m.kind in KEPT_MAP_KINDS]


def select_focal_agent(s: Scenario) -> str | None:
    """A2: the labeled focal agent if usable. Otherwise the first fully
    observed non-ego track in stored order."""
    if s.source_profile is SourceProfile.A2:
        track = s.track(s.focal_agent_id) if s.focal_agent_id is not None else None
        if track is None or track.is_ego or not track.fully_observed:
            return None
        return track.agent_id
    for t in s.tracks:
        if not t.is_ego and t.fully_observed:
            return t.agent_id
    return None


def _required_steps(profile: SourceProfile) -> int:
    return A2_STEPS if profile is SourceProfile.A2 else HOMOGENIZED_STEPS


def homogenize_scenario(raw: Scenario, profile: SourceProfile | str | None = None) -> HomogenizedSample | RejectionReason:
    """Homogenize one scenario, or return why it was rejected.

    ``profile`` overrides ``raw.source_profile`` when given.
    """
    try:
        profile = SourceProfile(profile) if profile is not None else SourceProfile(raw.source_profile)
    except ValueError:
        return RejectionReason.INVALID_SOURCE
    if raw.step_count < _required_steps(profile):
        return RejectionReason.TOO_SHORT

    # A2 keeps its 5 s history and loses the horizon tail; WO keeps all 91
    # steps and only the current step moves from 10 to 49.
    tracks = tuple(t.sliced(0, HOMOGENIZED_STEPS) if len(t) != HOMOGENIZED_STEPS else t for t in raw.tracks)
    metadata = {k: v for k, v in raw.metadata.items() if k not in JUNCTION_KEYS}
    trimmed = replace(
        raw,
        source_profile=profile,
        step_count=HOMOGENIZED_STEPS,
        tracks=tracks,
        map_elements=tuple(filter_map(raw.map_elements)),
        metadata=metadata,
    )
    focal = select_focal_agent(trimmed)
    if focal is None:
        return RejectionReason.NO_VALID_FOCAL
    return HomogenizedSample(scenario=replace(trimmed, focal_agent_id=focal), focal_agent_id=focal)


def cap_complexity(sample: HomogenizedSample, max_agents: int = 50, max_map: int = 80) -> HomogenizedSample:
    """Keep the ego, the focal agent and the agents/map elements nearest the ego.

    Distances are taken at the current step; agents unobserved there rank
    after every observed agent. Ties break on ascending identifier. Stored
    order of the survivors is preserved.
    """
    if max_agents < 1 or max_map < 1:
        raise InputError(f"caps must be >= 1, got agents={max_agents} map={max_map}")
    s = sample.scenario
    ego = s.ego
    if ego is None:
        raise InputError(f"scenario {s.scenario_id} has no ego track", code="MISSING_EGO")
    now = sample.current_step
    anchor = ego.positions[now]

    keep_ids = {ego.agent_id, sample.focal_agent_id}
    others = []
    for t in s.tracks:
        if t.agent_id in keep_ids:
            continue
        dist = float(np.hypot(*(t.positions[now] - anchor))) if t.observed[now] else float("inf")
        others.append((dist, t.agent_id))
    others.sort()
    slots = max(0, max_agents - len(keep_ids))
    keep_ids.update(aid for _, aid in others[:slots])
    tracks = tuple(t for t in s.tracks if t.agent_id in keep_ids)

    ranked = sorted(
        (float(np.hypot(*(m.polyline - anchor).T).min()), m.element_id, i) for i, m in enumerate(s.map_elements)
    )
    keep_map = {i for _, _, i in ranked[:max_map]}
    elements = tuple(m for i, m in enumerate(s.map_elements) if i in keep_map)

    if len(tracks) == len(s.tracks) and len(elements) == len(s.map_elements):
        return sample
    return replace(sample, scenario=replace(s, tracks=tracks, map_elements=elements))

