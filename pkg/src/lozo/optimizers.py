"""ZO-SGD, the low-rank lazy-subspace optimizer, and its momentum variant.

All three optimizers follow the same in-place pattern: perturb the parameters
with factors regenerated from seeds, take one central difference (two loss
evaluations per step), restore, and apply the update layer by layer.
Persistent optimizer state is seeds plus, for the momentum variant, one
m x r factor per layer. Trajectories are pure functions of
(X0, config, base_seed, loss).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimators import DEFAULT_EPSILON, EvaluationError, _central_difference
from .linalg import LayerShape, ParamSet
from .sampling import (
    STREAM_U,
    STREAM_V,
    STREAM_Z,
    SamplerKind,
    Seed,
    derive_seed,
    sample_gaussian,
    sample_v,
)

ALGORITHMS = ("zo-sgd", "lozo", "lozo-m")


class StepError(RuntimeError):
    """An optimizer step failed; the parameters were restored first."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float
    total_steps: int
    base_seed: Seed
    epsilon: float = DEFAULT_EPSILON
    nu: int = 50
    ranks: Optional[tuple[int, ...]] = None  # None: use the ParamSet's shape ranks
    beta: float = 0.9
    v_kind: SamplerKind = SamplerKind.STANDARD_NORMAL

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.nu < 1:
            raise ValueError("nu must be at least 1")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")

    def effective_shapes(self, x: ParamSet) -> list[LayerShape]:
        if self.ranks is None:
            return list(x.shapes)
        ranks = self.ranks if len(self.ranks) > 1 else self.ranks * len(x.shapes)
        if len(ranks) != len(x.shapes):
            raise ValueError(f"{len(ranks)} ranks for {len(x.shapes)} layers")
        return [LayerShape(s.m, s.n, r) for s, r in zip(x.shapes, ranks)]


@dataclass
class LozoState:
    """Step counter, period index, and the replayable V seeds."""

    t: int = 0
    k: int = -1
    v_seeds: Optional[tuple[Seed, ...]] = None
    prev_v_seeds: Optional[tuple[Seed, ...]] = None


@dataclass
class MomentumState:
    """Low-rank momentum factors N_l (m_l x r_l); never a full m x n matrix."""

    n_factors: list[np.ndarray]
    beta: float

    @classmethod
    def zeros(cls, shapes: Sequence[LayerShape], beta: float) -> "MomentumState":
        return cls([np.zeros((s.m, s.r)) for s in shapes], beta)

    def num_elements(self) -> int:
        return sum(f.size for f in self.n_factors)


@dataclass(frozen=True)
class RunRecord:
    """One telemetry row of a run."""

    step: int
    loss: float
    fd_scalar_abs: float
    est_norm: float
    wall_ms: float


def sample_index(t: int, num_samples: int) -> int:
    """Deterministic round-robin schedule over the finite sample set."""
    return t % num_samples


def _outer_norm(u: np.ndarray, v: np.ndarray) -> float:
    """Frobenius norm of U V^T via the r x r Gram matrices."""
    return float(np.sqrt(max(np.vdot(u.T @ u, v.T @ v).real, 0.0)))


def _u_seed(config: OptimizerConfig, layer: int, t: int) -> Seed:
    return derive_seed(config.base_seed, STREAM_U, layer, t)


def _v_seeds(config: OptimizerConfig, num_layers: int, period: int) -> tuple[Seed, ...]:
    return tuple(derive_seed(config.base_seed, STREAM_V, i, period) for i in range(num_layers))


def zo_sgd_step(x: ParamSet, loss, config: OptimizerConfig, t: int) -> tuple[float, float]:
    """MeZO-style step: RGE along a seeded full-size Gaussian Z, seed replay.

    Z is regenerated from (base_seed, layer, t) for the duration of the step
    and discarded afterwards; only seeds persist. Returns
    (finite-difference scalar, estimator norm).
    """
    zs = [
        sample_gaussian(derive_seed(config.base_seed, STREAM_Z, i, t), a.shape[0], a.shape[1])
        for i, a in enumerate(x.layers)
    ]

    def apply(scale: float) -> None:
        if scale == 0.0:
            return
        for a, z in zip(x.layers, zs):
            a += scale * z

    xi = sample_index(t, loss.num_samples)
    try:
        c = _central_difference(loss, x, xi, config.epsilon, apply)
    except EvaluationError as e:
        raise StepError(f"zo-sgd step {t} aborted: {e}", step=t) from e
    sq = 0.0
    for a, z in zip(x.layers, zs):
        a -= (config.alpha * c) * z
        sq += float(np.vdot(z, z))
    return c, abs(c) * float(np.sqrt(sq))


def _materialize(config: OptimizerConfig, shapes: Sequence[LayerShape], t: int, v_seeds: Sequence[Seed]):
    return [
        (
            sample_gaussian(_u_seed(config, i, t), s.m, s.r),
            sample_v(v_seeds[i], s.n, s.r, config.v_kind),
        )
        for i, s in enumerate(shapes)
    ]


def _lge_step(x: ParamSet, loss, config: OptimizerConfig, t: int, v_seeds: Sequence[Seed]) -> tuple[float, float]:
    """Shared core of the lazy and vanilla low-rank steps."""
    shapes = config.effective_shapes(x)
    factors = _materialize(config, shapes, t, v_seeds)

    def apply(scale: float) -> None:
        if scale == 0.0:
            return
        for a, (u, v) in zip(x.layers, factors):
            a += scale * (u @ v.T)

    xi = sample_index(t, loss.num_samples)
    try:
        c = _central_difference(loss, x, xi, config.epsilon, apply)
    except EvaluationError as e:
        raise StepError(f"low-rank step {t} aborted: {e}", step=t) from e
    sq = 0.0
    for a, s, (u, v) in zip(x.layers, shapes, factors):
        a -= (config.alpha * c / s.r) * (u @ v.T)
        sq += (_outer_norm(u, v) / s.r) ** 2
    return c, abs(c) * float(np.sqrt(sq))


def lozo_step(x: ParamSet, state: LozoState, loss, config: OptimizerConfig) -> tuple[float, float]:
    """One lazy-subspace step: V rotates only when t mod nu == 0."""
    t = state.t
    if t % config.nu == 0:
        state.prev_v_seeds = state.v_seeds
        state.k = t // config.nu
        state.v_seeds = _v_seeds(config, len(x), state.k)
    c, est_norm = _lge_step(x, loss, config, t, state.v_seeds)
    state.t = t + 1
    return c, est_norm


def vanilla_lge_step(x: ParamSet, loss, config: OptimizerConfig, t: int) -> tuple[float, float]:
    """Plain low-rank recursion: both factors freshly sampled every step."""
    return _lge_step(x, loss, config, t, _v_seeds(config, len(x), t))


def project_momentum(n_factor: np.ndarray, v_old: np.ndarray, v_new: np.ndarray, n: int) -> np.ndarray:
    """Map momentum onto a resampled row subspace: N (V_old^T V_new) / n.

    This is the least-squares projection when V_new^T V_new = n I.
    """
    return n_factor @ (v_old.T @ v_new) / n


def lozo_m_step(
    x: ParamSet, state: LozoState, mom: MomentumState, loss, config: OptimizerConfig
) -> tuple[float, float]:
    """Momentum step with low-rank accumulators and cross-subspace projection.

    At a resample boundary the old momentum factors are projected onto the
    new subspace before being updated; at t = 0 the momentum is all zeros and
    the projection branch is a no-op.
    """
    t = state.t
    shapes = config.effective_shapes(x)
    if t % config.nu == 0:
        new_seeds = _v_seeds(config, len(x), t // config.nu)
        if state.v_seeds is not None:
            for i, s in enumerate(shapes):
                v_old = sample_v(state.v_seeds[i], s.n, s.r, config.v_kind)
                v_new = sample_v(new_seeds[i], s.n, s.r, config.v_kind)
                mom.n_factors[i] = project_momentum(mom.n_factors[i], v_old, v_new, s.n)
        state.prev_v_seeds = state.v_seeds
        state.k = t // config.nu
        state.v_seeds = new_seeds
    factors = _materialize(config, shapes, t, state.v_seeds)

    def apply(scale: float) -> None:
        if scale == 0.0:
            return
        for a, (u, v) in zip(x.layers, factors):
            a += scale * (u @ v.T)

    xi = sample_index(t, loss.num_samples)
    try:
        c = _central_difference(loss, x, xi, config.epsilon, apply)
    except EvaluationError as e:
        raise StepError(f"lozo-m step {t} aborted: {e}", step=t) from e
    beta = mom.beta
    sq = 0.0
    for i, (a, s, (u, v)) in enumerate(zip(x.layers, shapes, factors)):
        mom.n_factors[i] = beta * mom.n_factors[i] + (1.0 - beta) * c * u
        a -= (config.alpha / s.r) * (mom.n_factors[i] @ v.T)
        sq += (_outer_norm(mom.n_factors[i], v) / s.r) ** 2
    state.t = t + 1
    return c, float(np.sqrt(sq))


def run(loss, x: ParamSet, config: OptimizerConfig, algo: str, eval_every: int = 1) -> list[RunRecord]:
    """Execute total_steps optimizer steps on x in place, recording telemetry.

    A record is appended every eval_every steps (and at the final step); its
    loss field is the oracle's evaluation metric, the exact finite-sample
    average where the problem defines one.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    if eval_every < 1:
        raise ValueError("eval_every must be at least 1")
    state = LozoState()
    mom = MomentumState.zeros(config.effective_shapes(x), config.beta) if algo == "lozo-m" else None
    records: list[RunRecord] = []
    for t in range(config.total_steps):
        t0 = time.perf_counter()
        if algo == "zo-sgd":
            c, est_norm = zo_sgd_step(x, loss, config, t)
        elif algo == "lozo":
            c, est_norm = lozo_step(x, state, loss, config)
        else:
            c, est_norm = lozo_m_step(x, state, mom, loss, config)
        wall_ms = (time.perf_counter() - t0) * 1e3
        if t % eval_every == 0 or t == config.total_steps - 1:
            records.append(
                RunRecord(step=t + 1, loss=loss.eval_metric(x), fd_scalar_abs=abs(c), est_norm=est_norm, wall_ms=wall_ms)
            )
    return records


def state_footprint(algo: str, shapes: Sequence[LayerShape]) -> int:
    """Optimizer-state element count beyond the parameters and seeds."""
    if algo in ("zo-sgd", "lozo"):
        return 0
    if algo == "lozo-m":
        return sum(s.m * s.r for s in shapes)
    if algo in ("zo-sgd-m", "full-momentum"):
        return sum(s.m * s.n for s in shapes)
    raise ValueError(f"unknown algorithm {algo!r}")
