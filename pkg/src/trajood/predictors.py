"""Baseline predictors: constant velocity and polynomial fit-and-extrapolate."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np

from trajood import CURRENT_STEP, FUTURE_STEPS, HISTORY_STEPS, STEP_DT
from trajood.errors import FitError, InputError, NumericError

if TYPE_CHECKING:
    from trajood.homogenize import HomogenizedSample

MAX_DEGREE = 7
MAX_CONDITION = 1e10


@dataclass(frozen=True, eq=False)
class PredictionSet:
    scenario_id: str
    agent_id: str
    modes: np.ndarray  # (K, 41, 2)
    probabilities: np.ndarray | None = None  # (K,)

    def __post_init__(self):
        modes = np.array(self.modes, dtype=float)
        if modes.ndim != 3 or modes.shape[0] < 1 or modes.shape[1:] != (FUTURE_STEPS, 2):
            raise ValueError(f"modes must have shape (K>=1, {FUTURE_STEPS}, 2), got {modes.shape}")
        if not np.isfinite(modes).all():
            raise ValueError("modes contain non-finite points")
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "scenario_id", str(self.scenario_id))
        object.__setattr__(self, "agent_id", str(self.agent_id))
        if self.probabilities is not None:
            probs = np.array(self.probabilities, dtype=float)
            if probs.shape != (modes.shape[0],):
                raise ValueError(f"expected {modes.shape[0]} probabilities, got shape {probs.shape}")
            if not np.isfinite(probs).all() or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-6:
                raise ValueError("probabilities must be non-negative and sum to 1 +- 1e-6")
            probs.setflags(write=False)
            object.__setattr__(self, "probabilities", probs)

    @property
    def k(self) -> int:
        return self.modes.shape[0]


@dataclass(frozen=True)
class PolyCoeffs:
    """Per-axis polynomial in normalized time ``tau = (step - center) / scale``.

    ``coefficients[axis, j]`` multiplies ``tau**j``.
    """

    degree: int
    coefficients: np.ndarray  # (2, degree + 1)
    center: float
    scale: float
    residual_ss: np.ndarray  # (2,)
    condition: float

    def normalize(self, steps) -> np.ndarray:
        return (np.asarray(steps, float) - self.center) / self.scale

    def evaluate(self, steps) -> np.ndarray:
        vander = np.vander(self.normalize(steps), self.degree + 1, increasing=True)
        return vander @ self.coefficients.T


@lru_cache(maxsize=256)
def _factorize(degree: int, steps: tuple[int, ...]):
    first, last = steps[0], steps[-1]
    center = 0.5 * (first + last)
    scale = 0.5 * (last - first) if last > first else 1.0
    tau = (np.asarray(steps, float) - center) / scale
    vander = np.vander(tau, degree + 1, increasing=True)
    q, r = np.linalg.qr(vander)
    diag = np.abs(np.diag(r))
    condition = float(diag.max() / diag.min()) if diag.min() > 0 else float("inf")
    if condition > MAX_CONDITION:
        # diag ratio is a cheap lower bound; confirm with the real condition number
        condition = float(np.linalg.cond(vander))
    return q, r, center, scale, condition, vander


def fit_polynomial(history, degree: int, steps: Sequence[int] | None = None) -> PolyCoeffs:
    """Least-squares polynomial fit of a 2D history, one polynomial per axis.

    ``steps`` are the step indices of the history rows (default 0..N-1); they
    are mapped affinely onto [-1, 1] before fitting. The system is solved
    through a QR factorization of the Vandermonde matrix.
    """
    history = np.asarray(history, float)
    if history.ndim != 2 or history.shape[1] != 2:
        raise InputError(f"history must be (N, 2), got {history.shape}")
    if not 1 <= degree <= MAX_DEGREE:
        raise InputError(f"degree {degree} outside [1, {MAX_DEGREE}]")
    steps = tuple(range(len(history))) if steps is None else tuple(np.asarray(steps, dtype=int).tolist())
    if len(steps) != len(history):
        raise InputError("steps and history differ in length")
    if len(history) < degree + 1:
        raise FitError(f"{len(history)} points cannot determine a degree-{degree} fit", condition=float("inf"))
    if not np.isfinite(history).all():
        raise FitError("history contains non-finite points", condition=float("nan"))
    q, r, center, scale, condition, vander = _factorize(degree, steps)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise FitError(f"degree-{degree} system ill-conditioned (cond={condition:.3g})", condition=condition)
    coeffs = np.linalg.solve(r, q.T @ history).T
    resid = history - vander @ coeffs.T
    return PolyCoeffs(
        degree=degree,
        coefficients=coeffs,
        center=center,
        scale=scale,
        residual_ss=(resid * resid).sum(axis=0),
        condition=condition,
    )


FUTURE_STEP_INDICES = np.arange(CURRENT_STEP + 1, CURRENT_STEP + 1 + FUTURE_STEPS)


def _agent_track(sample: HomogenizedSample, agent_id: str):
    track = sample.scenario.track(agent_id)
    if track is None:
        raise InputError(f"agent {agent_id} not in scenario {sample.scenario.scenario_id}", code="UNKNOWN_AGENT")
    return track


def predict_constant_velocity(sample: HomogenizedSample, agent_id: str) -> PredictionSet:
    track = _agent_track(sample, agent_id)
    now = sample.current_step
    if not track.observed[now]:
        raise InputError(f"agent {agent_id} unobserved at step {now}", code="NOT_OBSERVED")
    offsets = (FUTURE_STEP_INDICES - now) * STEP_DT
    mode = track.positions[now] + offsets[:, None] * track.velocities[now]
    return PredictionSet(sample.scenario.scenario_id, agent_id, mode[None], np.ones(1))


def predict_polynomial(sample: HomogenizedSample, agent_id: str, degrees: Sequence[int]) -> PredictionSet:
    """One mode per degree, each extrapolating a fit of the observed history.

    Degrees whose fit fails are dropped; probabilities are uniform over the
    remaining modes.
    """
    if not degrees:
        raise InputError("degrees must be non-empty")
    track = _agent_track(sample, agent_id)
    hist = np.flatnonzero(track.observed[:HISTORY_STEPS])
    history = track.positions[hist]
    modes, failures = [], []
    for degree in degrees:
        try:
            fit = fit_polynomial(history, degree, steps=hist)
        except FitError as exc:
            failures.append(f"degree {degree}: {exc}")
            continue
        modes.append(fit.evaluate(FUTURE_STEP_INDICES))
    if not modes:
        raise NumericError(
            f"all fits failed for {sample.scenario.scenario_id}/{agent_id}: " + "; ".join(failures),
            code="PREDICTION_ERROR",
        )
    k = len(modes)
    return PredictionSet(sample.scenario.scenario_id, agent_id, np.stack(modes), np.full(k, 1.0 / k))
