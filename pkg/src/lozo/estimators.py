"""Zeroth-order gradient estimators: coordinate-wise, random-direction, low-rank.

All estimators perturb the parameter set in place with the +eps / -2eps / +eps
phase pattern and restore it before returning, accepting a few ulps of
floating-point drift rather than checkpointing the parameters. The low-rank
path works from a PerturbationSketch, so the only persistent state between
calls is seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import Matrix, ParamSet
from .sampling import PerturbationSketch, SamplerKind, regenerate

DEFAULT_EPSILON = 1e-3
CGE_DIMENSION_CAP = 100_000


class EvaluationError(RuntimeError):
    """Loss oracle produced a non-finite value; parameters were restored."""

    def __init__(self, message: str, layer: int | None = None, entry: tuple[int, int] | None = None):
        super().__init__(message)
        self.layer = layer
        self.entry = entry


@dataclass(frozen=True)
class EstimatorConfig:
    """Perturbation scale, per-layer ranks, and the V sampler family."""

    epsilon: float = DEFAULT_EPSILON
    ranks: tuple[int, ...] = (2,)
    v_kind: SamplerKind = SamplerKind.STANDARD_NORMAL

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be positive")


def _factors(sketch: PerturbationSketch) -> list[tuple[Matrix, Matrix]]:
    return [regenerate(sketch, i) for i in range(len(sketch))]


def _apply_factors(x: ParamSet, scale: float, factors: Sequence[tuple[Matrix, Matrix]]) -> None:
    if scale == 0.0:
        return
    for a, (u, v) in zip(x.layers, factors):
        a += scale * (u @ v.T)


def perturb_in_place(x: ParamSet, scale: float, sketch: PerturbationSketch) -> None:
    """X_l += scale * U_l V_l^T, factors regenerated from seeds and discarded."""
    if len(sketch) != len(x):
        raise ValueError(f"sketch has {len(sketch)} layers, parameters have {len(x)}")
    if scale == 0.0:
        return
    for i, a in enumerate(x.layers):
        u, v = regenerate(sketch, i)
        a += scale * (u @ v.T)


def _central_difference(loss, x: ParamSet, xi: int, epsilon: float, apply) -> float:
    """Evaluate (F(X + eps P) - F(X - eps P)) / 2 eps via in-place phases.

    `apply(scale)` adds scale * P to x. The parameter set is restored on every
    exit path, including oracle exceptions.
    """
    apply(epsilon)
    offset = 1.0
    try:
        f_plus = float(loss.evaluate(x, xi))
        apply(-2.0 * epsilon)
        offset = -1.0
        f_minus = float(loss.evaluate(x, xi))
    finally:
        apply(-offset * epsilon)
    if not np.isfinite(f_plus) or not np.isfinite(f_minus):
        raise EvaluationError(f"non-finite loss in central difference: F+={f_plus}, F-={f_minus}")
    return (f_plus - f_minus) / (2.0 * epsilon)


def lge_scalar(loss, x: ParamSet, sketch: PerturbationSketch, epsilon: float, xi: int) -> float:
    """Finite-difference scalar c for the low-rank perturbation {U_l V_l^T}.

    Each layer's (U, V) pair is materialized once for the call, so the three
    phases add bit-identical increments and the round-trip drift stays within a
    few ulps per entry.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    factors = _factors(sketch)
    return _central_difference(loss, x, xi, epsilon, lambda s: _apply_factors(x, s, factors))


def lge(loss, x: ParamSet, sketch: PerturbationSketch, epsilon: float, xi: int) -> ParamSet:
    """Low-rank gradient estimate: layer l gets c * U_l V_l^T / r_l."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    factors = _factors(sketch)
    c = _central_difference(loss, x, xi, epsilon, lambda s: _apply_factors(x, s, factors))
    grads = [(c / s.r) * (u @ v.T) for s, (u, v) in zip(x.shapes, factors)]
    return ParamSet(grads, x.shapes)


def rge(loss, x: ParamSet, z: ParamSet | Sequence[Matrix], epsilon: float, xi: int) -> ParamSet:
    """Random-direction estimate c * Z from one central difference along Z."""
    zs = z.layers if isinstance(z, ParamSet) else [np.asarray(m, dtype=np.float64) for m in z]
    if len(zs) != len(x):
        raise ValueError("Z must have one matrix per layer")
    for a, zm in zip(x.layers, zs):
        if a.shape != zm.shape:
            raise ValueError(f"Z layer shape {zm.shape} does not match parameters {a.shape}")

    def apply(scale: float) -> None:
        if scale == 0.0:
            return
        for a, zm in zip(x.layers, zs):
            a += scale * zm

    c = _central_difference(loss, x, xi, epsilon, apply)
    return ParamSet([c * zm for zm in zs], x.shapes)


def cge(loss, x: ParamSet, epsilon: float, xi: int, max_dim: int = CGE_DIMENSION_CAP) -> ParamSet:
    """Coordinate-wise central differences; exactly 2d loss evaluations.

    Refuses to run above max_dim coordinates to avoid accidental 2d blowups.
    Entries are saved and restored exactly around each probe.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    d = x.num_elements()
    if d > max_dim:
        raise ValueError(f"CGE over {d} coordinates exceeds the cap of {max_dim}; raise max_dim to override")
    grads = [np.zeros_like(a) for a in x.layers]
    for li, a in enumerate(x.layers):
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                orig = a[i, j]
                a[i, j] = orig + epsilon
                f_plus = float(loss.evaluate(x, xi))
                a[i, j] = orig - epsilon
                f_minus = float(loss.evaluate(x, xi))
                a[i, j] = orig
                if not np.isfinite(f_plus) or not np.isfinite(f_minus):
                    raise EvaluationError(
                        f"non-finite loss at layer {li}, entry ({i}, {j}): F+={f_plus}, F-={f_minus}",
                        layer=li,
                        entry=(i, j),
                    )
                grads[li][i, j] = (f_plus - f_minus) / (2.0 * epsilon)
    return ParamSet(grads, x.shapes)
