"""Canonical scenario/prediction files, synthetic corpora and noise injection.

Files are UTF-8 JSON Lines, one record per line, encoded with orjson. Floats
are written in shortest round-trip form and keys in a fixed order, so
write -> parse -> write is byte-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from operator import itemgetter
from pathlib import Path
from typing import Iterable

import numpy as np
import orjson

from trajood import SCHEMA_VERSION, STEP_DT
from trajood.errors import ConfigError, ParseError, StorageError, ValidationError
from trajood.predictors import PredictionSet
from trajood.scenario import (
    AgentKind,
    MapElement,
    MapKind,
    Scenario,
    SourceProfile,
    Track,
    validate_scenario,
    wrap_angle,
)

log = logging.getLogger(__name__)

MANEUVERS = ("constant_velocity", "accelerate", "brake", "turn_left", "turn_right", "stop_and_go")

_STATE_FIELDS = ("x", "y", "heading", "vx", "vy", "observed")
_state_row = itemgetter(*_STATE_FIELDS)


# --------------------------------------------------------------------------
# scenario records
# --------------------------------------------------------------------------


def scenario_to_record(s: Scenario) -> dict:
    tracks = []
    for t in s.tracks:
        (xs, ys), hs, (vxs, vys) = t.positions.T.tolist(), t.headings.tolist(), t.velocities.T.tolist()
        obs = t.observed.tolist()
        tracks.append(
            {
                "agent_id": t.agent_id,
                "agent_kind": t.agent_kind.value,
                "is_ego": bool(t.is_ego),
                "states": [
                    {"x": x, "y": y, "heading": h, "vx": vx, "vy": vy, "observed": o}
                    for x, y, h, vx, vy, o in zip(xs, ys, hs, vxs, vys, obs)
                ],
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": s.scenario_id,
        "source_profile": s.source_profile.value,
        "step_count": int(s.step_count),
        "tracks": tracks,
        "map_elements": [
            {"element_id": m.element_id, "kind": m.kind.value, "points": m.polyline.tolist()} for m in s.map_elements
        ],
        "focal_agent_id": s.focal_agent_id,
        "metadata": {k: s.metadata[k] for k in sorted(s.metadata)},
    }


def _require(rec: dict, key: str, line: int | None, where: str = "record"):
    try:
        return rec[key]
    except (KeyError, TypeError):
        raise ParseError(f"{where} is missing field {key!r}", line=line, field=key) from None


def _parse_track(rec: dict, line: int | None) -> Track:
    agent_id = _require(rec, "agent_id", line, "track")
    where = f"track {agent_id}"
    states = _require(rec, "states", line, where)
    try:
        rows = list(map(_state_row, states))
    except KeyError as exc:
        key = exc.args[0]
        raise ParseError(f"{where}: state is missing field {key!r}", line=line, field=key) from None
    except TypeError:
        raise ParseError(f"{where}: states must be a list of objects", line=line, field="states") from None
    try:
        table = np.array(rows, dtype=float).reshape(-1, len(_STATE_FIELDS))
    except (TypeError, ValueError):
        raise ParseError(f"{where}: non-numeric state value", line=line, field="states") from None
    pos, heading, vel = table[:, 0:2], table[:, 2], table[:, 3:5]
    observed = table[:, 5] != 0
    try:
        kind = AgentKind(_require(rec, "agent_kind", line, where))
    except ValueError:
        raise ParseError(f"{where}: unknown agent_kind {rec['agent_kind']!r}", line=line, field="agent_kind") from None
    return Track(
        agent_id=agent_id,
        agent_kind=kind,
        is_ego=bool(_require(rec, "is_ego", line, where)),
        positions=pos,
        headings=heading,
        velocities=vel,
        observed=observed,
    )


def _parse_map_element(rec: dict, line: int | None) -> MapElement:
    element_id = _require(rec, "element_id", line, "map element")
    where = f"map element {element_id}"
    try:
        kind = MapKind(_require(rec, "kind", line, where))
    except ValueError:
        raise ParseError(f"{where}: unknown kind {rec['kind']!r}", line=line, field="kind") from None
    try:
        points = np.asarray(_require(rec, "points", line, where), float).reshape(-1, 2)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: points must be [[x, y], ...]", line=line, field="points") from None
    return MapElement(element_id=element_id, kind=kind, polyline=points)


def record_to_scenario(rec: dict, line: int | None = None) -> Scenario:
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", line=line)
    version = _require(rec, "schema_version", line)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version!r}", line=line, field="schema_version")
    try:
        profile = SourceProfile(_require(rec, "source_profile", line))
    except ValueError:
        raise ParseError(f"unknown source_profile {rec['source_profile']!r}", line=line, field="source_profile") from None
    step_count = _require(rec, "step_count", line)
    if not isinstance(step_count, int) or isinstance(step_count, bool):
        raise ParseError("step_count must be an integer", line=line, field="step_count")
    metadata = rec.get("metadata") or {}
    if not isinstance(metadata, dict):
        raise ParseError("metadata must be an object", line=line, field="metadata")
    return Scenario(
        scenario_id=_require(rec, "scenario_id", line),
        source_profile=profile,
        step_count=step_count,
        tracks=[_parse_track(t, line) for t in _require(rec, "tracks", line)],
        map_elements=[_parse_map_element(m, line) for m in _require(rec, "map_elements", line)],
        focal_agent_id=rec.get("focal_agent_id"),
        metadata=metadata,
    )


def dumps_scenario(s: Scenario) -> bytes:
    return orjson.dumps(scenario_to_record(s))


def _loads(text, line):
    try:
        return orjson.loads(text)
    except orjson.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", line=line) from None


def loads_scenario(text, line: int | None = None, validate: bool = True) -> Scenario:
    rec = _loads(text, line)
    s = record_to_scenario(rec, line)
    if validate:
        report = validate_scenario(s)
        if report:
            raise ValidationError(
                f"scenario {s.scenario_id} (line {line}): " + "; ".join(str(v) for v in report),
                report=report,
                scenario_id=s.scenario_id,
                line=line,
            )
    return s


def _read_lines(path) -> Iterable[tuple[int, bytes]]:
    try:
        with open(path, "rb") as fh:
            for lineno, text in enumerate(fh, start=1):
                if text.strip():
                    yield lineno, text
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None


def _write_lines(lines: Iterable[bytes], path) -> int:
    count = 0
    try:
        with open(path, "wb") as fh:
            for text in lines:
                fh.write(text)
                fh.write(b"\n")
                count += 1
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from None
    return count


def parse_scenarios(path) -> list[Scenario]:
    """Read every scenario from a canonical file, validating each one."""
    return [loads_scenario(text, line=lineno) for lineno, text in _read_lines(path)]


def write_scenarios(scenarios: Iterable[Scenario], path) -> int:
    """Write scenarios to ``path``; returns the record count."""
    scenarios = list(scenarios)
    for s in scenarios:
        report = validate_scenario(s)
        if report:
            raise ValidationError(
                f"refusing to write invalid scenario {s.scenario_id}: " + "; ".join(map(str, report)),
                report=report,
                scenario_id=s.scenario_id,
            )
    return _write_lines((dumps_scenario(s) for s in scenarios), path)


# --------------------------------------------------------------------------
# prediction records
# --------------------------------------------------------------------------


def prediction_to_record(p: PredictionSet) -> dict:
    rec = {"scenario_id": p.scenario_id, "agent_id": p.agent_id, "modes": p.modes.tolist()}
    if p.probabilities is not None:
        rec["probabilities"] = p.probabilities.tolist()
    return rec


def record_to_prediction(rec: dict, line: int | None = None) -> PredictionSet:
    if not isinstance(rec, dict):
        raise ParseError("prediction record is not a JSON object", line=line)
    scenario_id = _require(rec, "scenario_id", line, "prediction")
    agent_id = _require(rec, "agent_id", line, "prediction")
    try:
        modes = np.asarray(_require(rec, "modes", line, "prediction"), float)
        probs = rec.get("probabilities")
        probs = None if probs is None else np.asarray(probs, float)
    except (TypeError, ValueError):
        raise ParseError("prediction modes/probabilities must be numeric arrays", line=line, field="modes") from None
    try:
        return PredictionSet(scenario_id=scenario_id, agent_id=agent_id, modes=modes, probabilities=probs)
    except ValueError as exc:
        raise ParseError(f"prediction {scenario_id}/{agent_id}: {exc}", line=line, field="modes") from None


def write_predictions(predictions: Iterable[PredictionSet], path) -> int:
    return _write_lines(
        (orjson.dumps(prediction_to_record(p)) for p in predictions), path
    )


def parse_predictions(path) -> list[PredictionSet]:
    out = []
    for lineno, text in _read_lines(path):
        out.append(record_to_prediction(_loads(text, lineno), lineno))
    return out


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    scenario_count: int = 100
    step_count: int = 91
    maneuver_mix: dict[str, float] = field(default_factory=lambda: {"constant_velocity": 1.0})
    maneuver_window: tuple[int, int] = (10, 49)
    speed_range: tuple[float, float] = (2.0, 15.0)
    noise_sigma: float = 0.0
    agent_count_range: tuple[int, int] = (2, 4)
    map_elements_per_scene: int = 4
    seed: int = 0
    source_profile: str = "synthetic"

    def validate(self) -> None:
        problems = []
        if self.scenario_count < 0:
            problems.append(f"scenario_count {self.scenario_count} < 0")
        if self.step_count < 2:
            problems.append(f"step_count {self.step_count} < 2")
        unknown = set(self.maneuver_mix) - set(MANEUVERS)
        if unknown:
            problems.append(f"unknown maneuver kinds {sorted(unknown)}")
        weights = list(self.maneuver_mix.values())
        if any(not math.isfinite(w) or w < 0 for w in weights) or not sum(weights) > 0:
            problems.append("maneuver weights must be non-negative with a positive sum")
        start, end = self.maneuver_window
        if not 0 <= start <= end < self.step_count:
            problems.append(f"maneuver_window {self.maneuver_window} not within [0, {self.step_count})")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            problems.append(f"speed_range {self.speed_range} invalid")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            problems.append(f"noise_sigma {self.noise_sigma} must be >= 0")
        amin, amax = self.agent_count_range
        if not 2 <= amin <= amax:
            problems.append(f"agent_count_range {self.agent_count_range} must satisfy 2 <= min <= max (ego + focal)")
        if self.map_elements_per_scene < 0:
            problems.append("map_elements_per_scene < 0")
        if not 0 <= self.seed < 2**64:
            problems.append(f"seed {self.seed} outside unsigned 64-bit range")
        try:
            SourceProfile(self.source_profile)
        except ValueError:
            problems.append(f"unknown source_profile {self.source_profile!r}")
        if problems:
            raise ConfigError("; ".join(problems))


def _maneuver_segments(kind: str, speed: float, window: tuple[int, int], rng, dt: float = STEP_DT):
    """Piecewise (duration, acceleration, yaw_rate) segments for one track.

    Segments never combine acceleration and turning, so every sample has a
    closed form. The final segment is open-ended.
    """
    ws, we = window
    span = we - ws
    if kind == "constant_velocity" or span == 0:
        return [(math.inf, 0.0, 0.0)]
    length = int(rng.integers(max(1, min(10, span)), span + 1))
    start = ws + int(rng.integers(0, span - length + 1))
    t0, dur = start * dt, length * dt
    if kind == "accelerate":
        body = [(dur, float(rng.uniform(1.0, 3.0)), 0.0)]
    elif kind == "brake":
        end_speed = speed * float(rng.uniform(0.0, 0.5))
        body = [(dur, (end_speed - speed) / dur, 0.0)]
    elif kind in ("turn_left", "turn_right"):
        sweep = float(rng.uniform(math.pi / 4, math.pi / 2))
        body = [(dur, 0.0, (sweep if kind == "turn_left" else -sweep) / dur)]
    elif kind == "stop_and_go":
        third = dur / 3.0
        resume = speed * float(rng.uniform(0.5, 1.0))
        body = [(third, -speed / third, 0.0), (third, 0.0, 0.0), (third, resume / third, 0.0)]
    else:
        raise ConfigError(f"unknown maneuver {kind!r}")
    return [(t0, 0.0, 0.0), *body, (math.inf, 0.0, 0.0)]


def integrate_segments(p0, heading0: float, speed0: float, segments, times: np.ndarray):
    """Sample positions, headings and velocities of a piecewise maneuver."""
    times = np.asarray(times, float)
    pos = np.empty((len(times), 2))
    theta = np.empty(len(times))
    speed = np.empty(len(times))
    px, py = float(p0[0]), float(p0[1])
    th, s, t_seg = heading0, speed0, 0.0
    for duration, accel, yaw_rate in segments:
        t_end = t_seg + duration
        # times are sorted, so each segment covers one contiguous slice
        lo, hi = np.searchsorted(times, (t_seg, t_end), side="left")
        mask = slice(lo, hi)
        tau = times[mask] - t_seg
        c, si = math.cos(th), math.sin(th)
        if yaw_rate == 0.0:
            d = s * tau + 0.5 * accel * tau * tau
            pos[mask, 0] = px + d * c
            pos[mask, 1] = py + d * si
            theta[mask] = th
            speed[mask] = np.maximum(s + accel * tau, 0.0)
        else:
            ang = th + yaw_rate * tau
            radius = s / yaw_rate
            pos[mask, 0] = px + radius * (np.sin(ang) - si)
            pos[mask, 1] = py + radius * (c - np.cos(ang))
            theta[mask] = ang
            speed[mask] = s
        if math.isinf(duration):
            break
        if yaw_rate == 0.0:
            d = s * duration + 0.5 * accel * duration * duration
            px, py = px + d * c, py + d * si
            s = max(s + accel * duration, 0.0)
        else:
            ang = th + yaw_rate * duration
            radius = s / yaw_rate
            px, py = px + radius * (math.sin(ang) - si), py + radius * (c - math.cos(ang))
            th = ang
        t_seg = t_end
    velocity = np.column_stack([speed * np.cos(theta), speed * np.sin(theta)])
    return pos, wrap_angle(theta), velocity


def _synthetic_track(agent_id, kind, is_ego, maneuver, cfg: SyntheticConfig, rng, box: float) -> Track:
    p0 = rng.uniform(-box, box, size=2)
    heading = float(rng.uniform(-math.pi, math.pi))
    speed = float(rng.uniform(*cfg.speed_range))
    segments = _maneuver_segments(maneuver, speed, cfg.maneuver_window, rng)
    times = np.arange(cfg.step_count) * STEP_DT
    pos, headings, vel = integrate_segments(p0, heading, speed, segments, times)
    return Track(
        agent_id=agent_id,
        agent_kind=kind,
        is_ego=is_ego,
        positions=pos,
        headings=headings,
        velocities=vel,
        observed=np.ones(cfg.step_count, bool),
    )


_MAP_KINDS = (MapKind.LANE_CENTER, MapKind.LANE_BOUNDARY, MapKind.CROSSWALK, MapKind.LANE_CENTER)
_OTHER_KINDS = (AgentKind.VEHICLE, AgentKind.PEDESTRIAN, AgentKind.CYCLIST)


def _scenario_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


def _draw(rng: np.random.Generator, cdf: np.ndarray) -> int:
    # same draw as rng.choice(len(cdf), p=...), without its per-call validation
    return int(cdf.searchsorted(rng.random(), side="right"))


def _synthetic_scenario(cfg: SyntheticConfig, index: int, kinds: list[str], cdf: np.ndarray) -> Scenario:
    rng = _scenario_rng(cfg.seed, index)
    n_agents = int(rng.integers(cfg.agent_count_range[0], cfg.agent_count_range[1] + 1))
    focal_maneuver = kinds[_draw(rng, cdf)]
    tracks = [
        _synthetic_track("ego", AgentKind.VEHICLE, True, "constant_velocity", cfg, rng, box=5.0),
        _synthetic_track("focal", AgentKind.VEHICLE, False, focal_maneuver, cfg, rng, box=20.0),
    ]
    for j in range(n_agents - 2):
        maneuver = kinds[_draw(rng, cdf)]
        kind = _OTHER_KINDS[int(rng.integers(len(_OTHER_KINDS)))]
        tracks.append(_synthetic_track(f"agent_{j:03d}", kind, False, maneuver, cfg, rng, box=60.0))
    elements = []
    for j in range(cfg.map_elements_per_scene):
        start = rng.uniform(-80.0, 80.0, size=2)
        ang = rng.uniform(-math.pi, math.pi)
        steps = np.linspace(0.0, float(rng.uniform(10.0, 40.0)), 5)
        pts = start + np.outer(steps, [math.cos(ang), math.sin(ang)])
        elements.append(MapElement(f"map_{j:03d}", _MAP_KINDS[j % len(_MAP_KINDS)], pts))
    s = Scenario(
        scenario_id=f"syn-{cfg.seed}-{index:06d}",
        source_profile=cfg.source_profile,
        step_count=cfg.step_count,
        tracks=tracks,
        map_elements=elements,
        focal_agent_id="focal",
        metadata={"maneuver": focal_maneuver, "noise_sigma": float(cfg.noise_sigma)},
    )
    if cfg.noise_sigma > 0:
        s = _noisy(s, cfg.noise_sigma, _scenario_rng(cfg.seed, index, stream=1))
    return s


def generate_synthetic(cfg: SyntheticConfig) -> list[Scenario]:
    """Generate ``cfg.scenario_count`` deterministic synthetic scenarios.

    Track 0 is a constant-velocity ego, track 1 the fully observed focal agent
    whose maneuver kind is recorded in ``metadata["maneuver"]``. Each scenario
    draws from its own seed stream, so output does not depend on batching.
    """
    cfg.validate()
    kinds = [k for k in MANEUVERS if cfg.maneuver_mix.get(k, 0) > 0]
    weights = np.array([cfg.maneuver_mix[k] for k in kinds], float)
    weights /= weights.sum()
    cdf = weights.cumsum()
    cdf /= cdf[-1]
    return [_synthetic_scenario(cfg, i, kinds, cdf) for i in range(cfg.scenario_count)]


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------


def kinematics_from_positions(positions: np.ndarray, dt: float = STEP_DT):
    """Central-difference velocities (one-sided at the ends) and headings."""
    positions = np.asarray(positions, float)
    vel = np.zeros_like(positions)
    if len(positions) >= 2:
        vel[1:-1] = (positions[2:] - positions[:-2]) / (2.0 * dt)
        vel[0] = (positions[1] - positions[0]) / dt
        vel[-1] = (positions[-1] - positions[-2]) / dt
    heading = wrap_angle(np.arctan2(vel[:, 1], vel[:, 0]))
    return vel, np.atleast_1d(heading)


def _noisy(s: Scenario, sigma: float, rng: np.random.Generator) -> Scenario:
    tracks = []
    for t in s.tracks:
        pos = t.positions + rng.normal(0.0, sigma, size=t.positions.shape)
        vel, heading = kinematics_from_positions(pos)
        tracks.append(replace(t, positions=pos, velocities=vel, headings=heading))
    return replace(s, tracks=tuple(tracks))


def add_noise(scenarios: list[Scenario], sigma: float, seed: int) -> list[Scenario]:
    """Perturb every position by i.i.d. N(0, sigma^2) per coordinate.

    Velocities and headings are recomputed from the noisy positions.
    ``sigma == 0`` returns the input unchanged.
    """
    if not (math.isfinite(sigma) and sigma >= 0):
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return list(scenarios)
    return [_noisy(s, sigma, _scenario_rng(seed, i, stream=2)) for i, s in enumerate(scenarios)]


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from None
