"""Dense matrix primitives and per-layer parameter sets.

Matrices are plain 2-D float64 numpy arrays (C order). A ParamSet bundles
the per-layer weight matrices together with their shapes and perturbation
ranks; it is the optimization variable everything else operates on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Matrix = np.ndarray


@dataclass(frozen=True)
class LayerShape:
    """Dimensions (m, n) of one weight matrix and its perturbation rank r."""

    m: int
    n: int
    r: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"matrix dimensions must be positive, got {self.m}x{self.n}")
        if self.r < 1 or self.r > min(self.m, self.n):
            raise ValueError(f"rank must satisfy 1 <= r <= min(m, n), got r={self.r} for {self.m}x{self.n}")


def as_matrix(a) -> Matrix:
    """Coerce to a 2-D float64 array, validating shape and finiteness."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={out.ndim}")
    if not np.isfinite(out).all():
        raise ValueError("matrix contains non-finite entries")
    return out


class ParamSet:
    """Ordered collection of per-layer matrices with their shapes.

    The layers list is mutable on purpose: estimators and optimizers update
    parameters in place. Construction validates that every layer matches its
    declared shape.
    """

    __slots__ = ("layers", "shapes")

    def __init__(self, layers: Sequence, shapes: Sequence[LayerShape]):
        layers = [as_matrix(a) for a in layers]
        shapes = list(shapes)
        if len(layers) != len(shapes):
            raise ValueError(f"{len(layers)} layers but {len(shapes)} shapes")
        for i, (a, s) in enumerate(zip(layers, shapes)):
            if a.shape != (s.m, s.n):
                raise ValueError(f"layer {i} has shape {a.shape}, expected ({s.m}, {s.n})")
        self.layers = layers
        self.shapes = shapes

    @classmethod
    def zeros(cls, shapes: Sequence[LayerShape]) -> "ParamSet":
        return cls([np.zeros((s.m, s.n)) for s in shapes], shapes)

    @classmethod
    def from_arrays(cls, arrays: Iterable, ranks) -> "ParamSet":
        """Build from raw arrays; ranks is an int or one int per layer."""
        arrays = [as_matrix(a) for a in arrays]
        if isinstance(ranks, int):
            ranks = [ranks] * len(arrays)
        shapes = [LayerShape(a.shape[0], a.shape[1], r) for a, r in zip(arrays, ranks)]
        return cls(arrays, shapes)

    def copy(self) -> "ParamSet":
        return ParamSet([a.copy() for a in self.layers], self.shapes)

    def norm(self) -> float:
        """Global norm sqrt(sum of squared Frobenius norms over layers)."""
        return float(np.sqrt(sum(float(np.vdot(a, a)) for a in self.layers)))

    def num_elements(self) -> int:
        return sum(s.m * s.n for s in self.shapes)

    def __len__(self) -> int:
        return len(self.layers)

    def __repr__(self) -> str:
        dims = ", ".join(f"{s.m}x{s.n}(r={s.r})" for s in self.shapes)
        return f"ParamSet[{dims}]"


def frobenius_norm(a: Matrix) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.vdot(a, a).real))


def outer_product_scaled(u: Matrix, v: Matrix, s: float) -> Matrix:
    """s * U V^T for U (m x r) and V (n x r)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
        raise ValueError(f"factor shapes {u.shape} and {v.shape} do not share an inner dimension")
    return s * (u @ v.T)


def singular_values(a: Matrix) -> np.ndarray:
    """All singular values, descending."""
    a = np.asarray(a, dtype=np.float64)
    return np.linalg.svd(a, compute_uv=False)


def numeric_rank(a: Matrix, rel_tol: float) -> int:
    """Number of singular values above rel_tol times the largest one.

    The zero matrix has rank 0 by convention.
    """
    if not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must be in (0, 1), got {rel_tol}")
    sv = singular_values(a)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


def top_singular_values(a: Matrix, k: int) -> list[float]:
    """k largest singular values, descending."""
    a = np.asarray(a, dtype=np.float64)
    if not (1 <= k <= min(a.shape)):
        raise ValueError(f"k={k} out of range for a {a.shape[0]}x{a.shape[1]} matrix")
    return [float(s) for s in singular_values(a)[:k]]
