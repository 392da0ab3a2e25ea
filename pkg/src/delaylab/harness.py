"""Simulated asynchronous master-worker execution.

A run holds a ring buffer of the weights each worker last received. With a
constant delay ``D`` and ``D + 1`` workers in round robin, the gradient applied
at update ``s`` was computed on the master weights from exactly ``D`` updates
earlier (on the initial weights during warm-up). One run is strictly
sequential; runs share nothing, so sweeps may execute them in parallel.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

from .metrics import TraceRow
from .optim import (
    Algorithm,
    OptimizerConfig,
    OptimizerState,
    StepDiagnostics,
    ab_microstep,
    ab_step,
    ab_vel_only_step,
    ab_weight_only_step,
    braking_factors,
    dana_step,
    dc_step,
    sa_step,
    sgdm_step,
    sm_step,
)
from .vectors import GroupSpec, make_rng

__all__ = [
    "NonFiniteError",
    "DelayConfig",
    "WeightHistory",
    "StopCriterion",
    "TracePolicy",
    "RunStatus",
    "RunResult",
    "GradientOracle",
    "run_async",
    "steps_to_target",
]


class NonFiniteError(ArithmeticError):
    """Raised by gradient oracles when an evaluation produces non-finite
    values; the harness converts it into a Diverged status."""


class GradientOracle(Protocol):
    dim: int

    def initial_weights(self) -> np.ndarray: ...

    def gradient(self, w: np.ndarray, rng: np.random.Generator, step: int) -> np.ndarray: ...

    def loss(self, w: np.ndarray) -> float: ...


@dataclass(frozen=True)
class DelayConfig:
    """Constant gradient delay; the idealized setting uses ``delay + 1``
    round-robin workers."""

    delay: int = 0

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")

    @property
    def num_workers(self) -> int:
        return self.delay + 1


class WeightHistory:
    """Ring of the last ``delay + 1`` worker-visible snapshots.

    Each entry carries the index of the master state it represents; popping
    yields the snapshot a worker is computing on right now, which for update
    ``s`` is master state ``max(s - delay, 0)``.
    """

    def __init__(self, w0: np.ndarray, delay: int):
        frozen = w0.copy()
        frozen.flags.writeable = False
        self._ring: deque[tuple[np.ndarray, int]] = deque(
            [(frozen, 0)] * (delay + 1), maxlen=delay + 1
        )

    def pop(self) -> tuple[np.ndarray, int]:
        return self._ring.popleft()

    def push(self, w: np.ndarray, produced_at: int) -> None:
        self._ring.append((w, produced_at))


@dataclass(frozen=True)
class StopCriterion:
    """Early-exit rules evaluated on the noiseless master loss after every
    update. ``divergence_loss`` is an absolute cutoff; non-finite loss always
    diverges."""

    target_loss: float | None = None
    divergence_loss: float | None = None

    @property
    def active(self) -> bool:
        return self.target_loss is not None or self.divergence_loss is not None


@dataclass(frozen=True)
class TracePolicy:
    """What to record, and how often. ``every == 0`` disables row recording;
    the per-step loss history is kept only when ``keep_losses`` is set so that
    long sweeps stay cheap."""

    every: int = 0
    diagnostics: bool = False
    energy: bool = False
    update_alignment: bool = False
    keep_losses: bool = False


class RunStatus(str, Enum):
    CONVERGED = "converged"
    TIMEOUT = "timeout"
    DIVERGED = "diverged"


@dataclass
class RunResult:
    status: RunStatus
    steps_to_target: int | None
    steps_run: int
    final_loss: float
    weights: np.ndarray
    state: OptimizerState
    rows: list[TraceRow] = field(default_factory=list)
    losses: np.ndarray | None = None


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.sqrt(a @ a)) * float(np.sqrt(b @ b))
    if denom == 0.0 or not np.isfinite(denom):
        return 0.0
    return float(np.clip(float(a @ b) / denom, -1.0, 1.0))


def run_async(
    problem: GradientOracle,
    cfg: OptimizerConfig,
    delay: DelayConfig = DelayConfig(0),
    *,
    max_steps: int,
    groups: GroupSpec | None = None,
    stop: StopCriterion = StopCriterion(),
    trace: TracePolicy = TracePolicy(),
    seed: int = 0,
    rng: np.random.Generator | None = None,
    lr_schedule=None,
) -> RunResult:
    """Execute one simulated asynchronous run.

    ``lr_schedule`` maps a 0-based update index to a learning-rate multiplier.
    Losses are evaluated on the master weights (noiseless view) whenever a
    stop criterion, the loss history, or a trace row needs them.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if rng is None:
        rng = make_rng(seed)
    alg = cfg.algorithm
    w = np.array(problem.initial_weights(), dtype=np.float64, copy=True)
    n = len(w)
    if groups is None:
        groups = GroupSpec.single(n)
    state = OptimizerState.initial(cfg, n, delay.num_workers)
    history = WeightHistory(w, delay.delay)

    loss0 = float(problem.loss(w))
    losses = [loss0] if trace.keep_losses else None
    rows: list[TraceRow] = []
    if trace.every > 0:
        rows.append(TraceRow(step=0, loss=loss0, energy=loss0 if trace.energy else None))
    if not np.isfinite(loss0):
        return RunResult(RunStatus.DIVERGED, None, 0, loss0, w, state, rows,
                         np.asarray(losses) if losses is not None else None)
    if stop.target_loss is not None and loss0 <= stop.target_loss:
        return RunResult(RunStatus.CONVERGED, 0, 0, loss0, w, state, rows,
                         np.asarray(losses) if losses is not None else None)

    eval_every_step = stop.active or trace.keep_losses
    status = RunStatus.TIMEOUT
    steps_to = None
    steps_run = 0
    loss = loss0

    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(max_steps):
            t = s + 1
            worker = s % delay.num_workers
            stale_w, stale_idx = history.pop()
            record = trace.every > 0 and t % trace.every == 0
            w_pre = w.copy() if record and (trace.energy or trace.update_alignment) else None

            try:
                g = problem.gradient(stale_w, rng, s)
            except NonFiniteError:
                status = RunStatus.DIVERGED
                steps_run = t
                loss = float("nan")
                break

            diag: StepDiagnostics | None = None
            if record and trace.diagnostics and alg not in (
                Algorithm.AB,
                Algorithm.AB_VEL_ONLY,
                Algorithm.AB_WEIGHT_ONLY,
                Algorithm.AB_MICROSTEP,
            ):
                # non-braking rules apply the raw gradient: alpha is exactly 1
                vel = state.worker_velocities[worker] if state.worker_velocities else state.velocity
                diag = StepDiagnostics(*braking_factors(g, vel, groups, 0.0, cfg.epsilon))

            eta_t = None if lr_schedule is None else cfg.eta * lr_schedule(s)
            if alg is Algorithm.SGDM:
                sgdm_step(w, state, g, cfg, eta_t)
            elif alg is Algorithm.AB:
                diag = ab_step(w, state, g, cfg, groups, eta_t)
            elif alg is Algorithm.AB_VEL_ONLY:
                diag = ab_vel_only_step(w, state, g, cfg, groups, eta_t)
            elif alg is Algorithm.AB_WEIGHT_ONLY:
                diag = ab_weight_only_step(w, state, g, cfg, groups, eta_t)
            elif alg is Algorithm.AB_MICROSTEP:
                diag = ab_microstep(w, state, g, cfg, groups, eta_t)
            elif alg is Algorithm.SA:
                assert state.worker_iteration is not None
                staleness = s - state.worker_iteration[worker]
                sa_step(w, state, g, cfg, staleness, eta_t)
                state.worker_iteration[worker] = s + 1
            elif alg is Algorithm.SM:
                sm_step(w, state, g, cfg, worker, eta_t)
            elif alg is Algorithm.DANA:
                lookahead = dana_step(w, state, g, cfg, worker, eta_t)
                history.push(lookahead, t)
            elif alg is Algorithm.DC:
                dc_step(w, state, g, cfg, stale_w, eta_t)
            else:  # pragma: no cover
                raise ValueError(f"unknown algorithm {alg}")
            if alg is not Algorithm.DANA:
                history.push(w.copy(), t)
            steps_run = t

            if eval_every_step or record:
                loss = float(problem.loss(w))
            if losses is not None:
                losses.append(loss)

            if record:
                energy = None
                alignment = None
                if w_pre is not None:
                    delta = w - w_pre
                    eff_eta = cfg.eta if eta_t is None else eta_t
                    if trace.energy:
                        energy = loss + 0.5 * float(delta @ delta) / eff_eta
                    if trace.update_alignment:
                        alignment = _cosine(-delta, g)
                rows.append(
                    TraceRow(
                        step=t,
                        loss=loss,
                        energy=energy,
                        alpha=diag.alpha_per_group if diag else None,
                        grad_norm=diag.grad_norm_per_group if diag else None,
                        vel_norm=diag.vel_norm_per_group if diag else None,
                        gvr=diag.gvr_per_group if diag else None,
                        update_alignment=alignment,
                    )
                )

            if eval_every_step or record:
                if not np.isfinite(loss) or (
                    stop.divergence_loss is not None and loss > stop.divergence_loss
                ):
                    status = RunStatus.DIVERGED
                    break
                if stop.target_loss is not None and loss <= stop.target_loss:
                    status = RunStatus.CONVERGED
                    steps_to = t
                    break

    if not eval_every_step and status is RunStatus.TIMEOUT:
        loss = float(problem.loss(w))
    return RunResult(
        status=status,
        steps_to_target=steps_to,
        steps_run=steps_run,
        final_loss=loss,
        weights=w,
        state=state,
        rows=rows,
        losses=np.asarray(losses) if losses is not None else None,
    )


def steps_to_target(
    losses: Sequence[float], target: float, divergence_loss: float | None = None
) -> tuple[RunStatus, int | None]:
    """Scan a per-step loss history (index 0 = initial loss) for the first
    step at or below ``target``. Non-finite values (or values above the
    optional cutoff) encountered first report Diverged; otherwise Timeout."""
    for t, loss in enumerate(losses):
        if not np.isfinite(loss) or (divergence_loss is not None and loss > divergence_loss):
            return RunStatus.DIVERGED, None
        if loss <= target:
            return RunStatus.CONVERGED, t
    return RunStatus.TIMEOUT, None
