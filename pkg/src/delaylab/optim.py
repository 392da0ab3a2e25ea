"""Update rules: SGD with momentum, adaptive braking variants, and the
delay-mitigation baselines (staleness-aware, shifted momentum, DANA,
delay-compensated SGD).

All step functions mutate the weight vector and optimizer state in place and
are pure with respect to everything else. Braking variants return per-group
:class:`StepDiagnostics`; the others return ``None`` (their diagnostics are
recomputable from the inputs).

Conventions shared by every rule:

* velocity update first, then ``w -= eta * v`` (heavy-ball form),
* weight decay is added to the velocity as ``weight_decay * w`` using the
  pre-update weights, and never enters the gradient-velocity alignment,
* the alignment (and therefore alpha) is computed from the raw gradient and
  the velocity as it stood at step entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .vectors import GroupSpec, dot, group_dot, group_norm, norm

__all__ = [
    "Algorithm",
    "OptimizerConfig",
    "OptimizerState",
    "StepDiagnostics",
    "compute_alpha",
    "braking_factors",
    "sgdm_step",
    "ab_step",
    "ab_vel_only_step",
    "ab_weight_only_step",
    "ab_microstep",
    "sa_step",
    "sm_step",
    "dana_step",
    "dc_step",
]


class Algorithm(str, Enum):
    SGDM = "sgdm"
    AB = "ab"
    AB_VEL_ONLY = "ab_vel_only"
    AB_WEIGHT_ONLY = "ab_weight_only"
    AB_MICROSTEP = "ab_microstep"
    SA = "sa"
    SM = "sm"
    DANA = "dana"
    DC = "dc"


BRAKING_ALGORITHMS = frozenset(
    {Algorithm.AB, Algorithm.AB_VEL_ONLY, Algorithm.AB_WEIGHT_ONLY, Algorithm.AB_MICROSTEP}
)
PER_WORKER_ALGORITHMS = frozenset({Algorithm.SM, Algorithm.DANA})


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters for all update rules.

    ``rho`` is the braking coefficient, ``epsilon`` floors the norm product in
    the alignment denominator, ``micro_steps`` splits the braking velocity
    update, and ``dc_lambda0``/``dc_theta`` parameterize the delay-compensation
    variance-control schedule.
    """

    algorithm: Algorithm
    eta: float
    momentum: float = 0.0
    rho: float = 0.0
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    micro_steps: int = 1
    dc_lambda0: float = 2.0
    dc_theta: float = 0.95

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.micro_steps < 1:
            raise ValueError("micro_steps must be at least 1")
        if self.dc_lambda0 < 0:
            raise ValueError("dc_lambda0 must be nonnegative")
        if not 0.0 < self.dc_theta < 1.0:
            raise ValueError("dc_theta must lie in (0, 1)")


@dataclass
class OptimizerState:
    """Mutable per-run optimizer state.

    ``worker_velocities`` exists only for the per-worker-velocity algorithms
    (shifted momentum, DANA); ``worker_iteration`` only for staleness-aware;
    ``dc_second_moment`` only for delay compensation.
    """

    velocity: np.ndarray
    worker_velocities: list[np.ndarray] | None = None
    dc_second_moment: np.ndarray | None = None
    worker_iteration: list[int] | None = None
    step: int = 0

    @classmethod
    def initial(cls, cfg: OptimizerConfig, n: int, num_workers: int = 1) -> "OptimizerState":
        state = cls(velocity=np.zeros(n))
        if cfg.algorithm in PER_WORKER_ALGORITHMS:
            state.worker_velocities = [np.zeros(n) for _ in range(num_workers)]
        if cfg.algorithm is Algorithm.SA:
            state.worker_iteration = [0] * num_workers
        if cfg.algorithm is Algorithm.DC:
            state.dc_second_moment = np.zeros(n)
        return state


@dataclass
class StepDiagnostics:
    """Per-group alignment diagnostics captured at step entry."""

    alpha_per_group: np.ndarray
    grad_norm_per_group: np.ndarray
    vel_norm_per_group: np.ndarray
    gvr_per_group: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        gn, vn = self.grad_norm_per_group, self.vel_norm_per_group
        with np.errstate(divide="ignore", invalid="ignore"):
            gvr = np.where(vn > 0, gn / np.where(vn > 0, vn, 1.0), np.inf)
        self.gvr_per_group = gvr


def compute_alpha(
    g: np.ndarray,
    v: np.ndarray,
    rho: float,
    epsilon: float = 1e-8,
    start: int = 0,
    stop: int | None = None,
) -> float:
    """Braking factor ``1 - rho * <g, v> / max(||g|| ||v||, epsilon)`` over one
    index range. Always lies in ``[1 - rho, 1 + rho]``."""
    d = dot(g, v, start, stop)
    denom = max(norm(g, start, stop) * norm(v, start, stop), epsilon)
    return 1.0 - rho * d / denom


def braking_factors(
    g: np.ndarray, v: np.ndarray, groups: GroupSpec, rho: float, epsilon: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized per-group ``(alpha, ||g||, ||v||)``."""
    gn = group_norm(g, groups)
    vn = group_norm(v, groups)
    d = group_dot(g, v, groups)
    alpha = 1.0 - rho * d / np.maximum(gn * vn, epsilon)
    return alpha, gn, vn


def _check_shapes(w: np.ndarray, v: np.ndarray, g: np.ndarray) -> None:
    if w.shape != g.shape or w.shape != v.shape:
        raise ValueError(f"shape mismatch: w{w.shape} v{v.shape} g{g.shape}")


def _decayed(v: np.ndarray, w: np.ndarray, wd: float) -> None:
    # weight decay enters the velocity using pre-update weights
    if wd != 0.0:
        v += wd * w


def sgdm_step(
    w: np.ndarray, state: OptimizerState, g: np.ndarray, cfg: OptimizerConfig, eta: float | None = None
) -> None:
    """v = m*v + g + wd*w;  w = w - eta*v."""
    _check_shapes(w, state.velocity, g)
    eta = cfg.eta if eta is None else eta
    v = state.velocity
    v *= cfg.momentum
    v += g
    _decayed(v, w, cfg.weight_decay)
    w -= eta * v
    state.step += 1


def _alpha_scale(alpha: np.ndarray, groups: GroupSpec):
    # scalar for a single group, per-element expansion otherwise
    return float(alpha[0]) if groups.num_groups == 1 else groups.expand(alpha)


def ab_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    groups: GroupSpec,
    eta: float | None = None,
) -> StepDiagnostics:
    """Braked momentum step: per group, v = m*v + alpha*g + wd*w; w = w - eta*v."""
    _check_shapes(w, state.velocity, g)
    if groups.length != len(w):
        raise ValueError("group spec does not partition the parameter vector")
    eta = cfg.eta if eta is None else eta
    v = state.velocity
    alpha, gn, vn = braking_factors(g, v, groups, cfg.rho, cfg.epsilon)
    v *= cfg.momentum
    v += _alpha_scale(alpha, groups) * g
    _decayed(v, w, cfg.weight_decay)
    w -= eta * v
    state.step += 1
    return StepDiagnostics(alpha, gn, vn)


def ab_vel_only_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    groups: GroupSpec,
    eta: float | None = None,
) -> StepDiagnostics:
    """Scale the gradient only inside the stored velocity; the applied weight
    update uses the raw gradient: w = w - eta*(m*v + g + wd*w)."""
    _check_shapes(w, state.velocity, g)
    eta = cfg.eta if eta is None else eta
    v = state.velocity
    alpha, gn, vn = braking_factors(g, v, groups, cfg.rho, cfg.epsilon)
    applied = cfg.momentum * v
    applied += g
    _decayed(applied, w, cfg.weight_decay)
    v *= cfg.momentum
    v += _alpha_scale(alpha, groups) * g
    _decayed(v, w, cfg.weight_decay)
    w -= eta * applied
    state.step += 1
    return StepDiagnostics(alpha, gn, vn)


def ab_weight_only_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    groups: GroupSpec,
    eta: float | None = None,
) -> StepDiagnostics:
    """Keep the stored velocity plain (v = m*v + g + wd*w) but scale the
    gradient inside the applied update: w = w - eta*(m*v + alpha*g + wd*w)."""
    _check_shapes(w, state.velocity, g)
    eta = cfg.eta if eta is None else eta
    v = state.velocity
    alpha, gn, vn = braking_factors(g, v, groups, cfg.rho, cfg.epsilon)
    applied = cfg.momentum * v
    applied += _alpha_scale(alpha, groups) * g
    _decayed(applied, w, cfg.weight_decay)
    v *= cfg.momentum
    v += g
    _decayed(v, w, cfg.weight_decay)
    w -= eta * applied
    state.step += 1
    return StepDiagnostics(alpha, gn, vn)


def ab_microstep(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    groups: GroupSpec,
    eta: float | None = None,
) -> StepDiagnostics:
    """Split the braked velocity update into ``micro_steps`` sub-updates,
    recomputing alpha from the evolving velocity each time:

        v = m*v; repeat S times: v += (alpha(g, v)/S)*g; then w = w - eta*v

    ``||g||`` is constant within the loop and computed once. The reported
    alpha is the first sub-update's; the reported velocity norm is the
    entry-state one, matching the other variants.
    """
    _check_shapes(w, state.velocity, g)
    eta = cfg.eta if eta is None else eta
    s = cfg.micro_steps
    v = state.velocity
    entry_alpha, gn, vn = braking_factors(g, v, groups, cfg.rho, cfg.epsilon)
    if cfg.rho == 0.0:
        # alpha is identically 1, but summing S copies of g/S is not bitwise g;
        # take the exact momentum-SGD path so rho=0 reduces exactly
        v *= cfg.momentum
        v += g
        _decayed(v, w, cfg.weight_decay)
        w -= eta * v
        state.step += 1
        return StepDiagnostics(entry_alpha, gn, vn)
    v *= cfg.momentum
    first_alpha: np.ndarray | None = None
    for _ in range(s):
        vn_cur = group_norm(v, groups)
        d = group_dot(g, v, groups)
        alpha = 1.0 - cfg.rho * d / np.maximum(gn * vn_cur, cfg.epsilon)
        if first_alpha is None:
            first_alpha = alpha
        v += (_alpha_scale(alpha, groups) / s) * g
    _decayed(v, w, cfg.weight_decay)
    w -= eta * v
    state.step += 1
    assert first_alpha is not None
    return StepDiagnostics(first_alpha, gn, vn)


def sa_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    delay: int,
    eta: float | None = None,
) -> None:
    """Staleness-aware step: plain momentum update, weight step divided by the
    gradient's staleness. A fresh gradient (delay 0) divides by 1."""
    _check_shapes(w, state.velocity, g)
    eta = cfg.eta if eta is None else eta
    v = state.velocity
    v *= cfg.momentum
    v += g
    _decayed(v, w, cfg.weight_decay)
    w -= (eta / max(delay, 1)) * v
    state.step += 1


def sm_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    worker: int,
    eta: float | None = None,
) -> None:
    """Shifted momentum: worker ``worker`` keeps its own velocity; the master
    weights move by that worker's velocity only."""
    if state.worker_velocities is None:
        raise ValueError("shifted momentum requires per-worker velocities")
    vj = state.worker_velocities[worker]
    _check_shapes(w, vj, g)
    eta = cfg.eta if eta is None else eta
    vj *= cfg.momentum
    vj += g
    _decayed(vj, w, cfg.weight_decay)
    w -= eta * vj
    state.step += 1


def dana_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    worker: int,
    eta: float | None = None,
) -> np.ndarray:
    """DANA: shifted-momentum master update plus a lookahead estimate of the
    future weights, ``w_pre - eta*m*sum_j v_j``, which is what gets sent back
    to the worker. Returns the lookahead vector."""
    if state.worker_velocities is None:
        raise ValueError("dana requires per-worker velocities")
    vj = state.worker_velocities[worker]
    _check_shapes(w, vj, g)
    eta = cfg.eta if eta is None else eta
    w_pre = w.copy()
    vj *= cfg.momentum
    vj += g
    _decayed(vj, w, cfg.weight_decay)
    w -= eta * vj
    state.step += 1
    total_v = np.sum(state.worker_velocities, axis=0)
    return w_pre - (eta * cfg.momentum) * total_v


def dc_step(
    w: np.ndarray,
    state: OptimizerState,
    g: np.ndarray,
    cfg: OptimizerConfig,
    stale_w: np.ndarray,
    eta: float | None = None,
) -> None:
    """Delay-compensated step: correct the stale gradient with a diagonal
    curvature estimate before the momentum update,

        g_hat = g + lambda_t * (g*g) * (w - stale_w)

    where lambda_t = dc_lambda0 / (sqrt(M_t) + epsilon) and M_t is a running
    average of g*g with coefficient dc_theta.
    """
    _check_shapes(w, state.velocity, g)
    if stale_w.shape != w.shape:
        raise ValueError("stale weight snapshot shape mismatch")
    eta = cfg.eta if eta is None else eta
    m2 = state.dc_second_moment
    if m2 is None:
        raise ValueError("delay compensation requires second-moment state")
    gg = g * g
    m2 *= cfg.dc_theta
    m2 += (1.0 - cfg.dc_theta) * gg
    lam_t = cfg.dc_lambda0 / (np.sqrt(m2) + cfg.epsilon)
    ghat = g + lam_t * gg * (w - stale_w)
    v = state.velocity
    v *= cfg.momentum
    v += ghat
    _decayed(v, w, cfg.weight_decay)
    w -= eta * v
    state.step += 1
