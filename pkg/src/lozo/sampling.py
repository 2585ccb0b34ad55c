"""Deterministic seeded sampling of perturbation factors.

Seed replay: instead of storing the tall-skinny factors U and V, only 64-bit
seeds are kept and the matrices are regenerated on demand. Every stream is a
pure function of (base seed, stream tag, layer index, step or period index):
the key is produced by a splitmix64-style hash and fed to numpy's Philox
counter-based bit generator; normals come from Generator.standard_normal
(ziggurat). Identical keys give bit-identical matrices within a build.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import LayerShape, Matrix

Seed = int

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment

# stream tags keep the per-purpose substreams disjoint
STREAM_U = 0x11
STREAM_V = 0x22
STREAM_Z = 0x33
STREAM_DATA = 0x44


def splitmix64(x: int) -> int:
    """The splitmix64 finalizer; a fixed 64-bit mixing permutation."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(base: Seed, *words: int) -> Seed:
    """Hash (base, words...) into one 64-bit stream key."""
    h = base & _MASK64
    for w in words:
        h = splitmix64((h + _GAMMA + (w & _MASK64)) & _MASK64)
    return h


def _generator(seed: Seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


class SamplerKind(enum.Enum):
    """Distribution family for the row-space factor V."""

    STANDARD_NORMAL = "normal"
    HAAR_SCALED = "haar"
    RANDOM_COORDINATE = "coordinate"


def sample_gaussian(seed: Seed, rows: int, cols: int) -> Matrix:
    """I.i.d. standard normal matrix, deterministic per (seed, rows, cols)."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be positive")
    return _generator(seed).standard_normal((rows, cols))


def sample_v(seed: Seed, n: int, r: int, kind: SamplerKind) -> Matrix:
    """Draw the n x r factor V.

    STANDARD_NORMAL: i.i.d. N(0, 1) entries.
    HAAR_SCALED: sqrt(n) * Q with Q the Q-factor of a Gaussian draw, signs
        fixed so R's diagonal is nonnegative; V^T V = n I to rounding.
    RANDOM_COORDINATE: columns sqrt(n) * e_j with r distinct uniformly drawn
        indices; V^T V = n I exactly.
    """
    if r > n:
        raise ValueError(f"rank r={r} exceeds n={n}")
    gen = _generator(seed)
    if kind is SamplerKind.STANDARD_NORMAL:
        return gen.standard_normal((n, r))
    if kind is SamplerKind.HAAR_SCALED:
        q, rr = np.linalg.qr(gen.standard_normal((n, r)))
        signs = np.where(np.diag(rr) >= 0.0, 1.0, -1.0)
        return np.sqrt(n) * (q * signs)
    if kind is SamplerKind.RANDOM_COORDINATE:
        idx = gen.choice(n, size=r, replace=False)
        v = np.zeros((n, r))
        v[idx, np.arange(r)] = np.sqrt(n)
        return v
    raise ValueError(f"unknown sampler kind {kind!r}")


@dataclass(frozen=True)
class LayerSketch:
    """Seeds and shape that implicitly define one layer's U V^T perturbation."""

    seed_u: Seed
    seed_v: Seed
    shape: LayerShape
    v_kind: SamplerKind


@dataclass(frozen=True)
class PerturbationSketch:
    """Per-layer sketches; regenerating twice gives bit-identical factors."""

    layers: tuple[LayerSketch, ...]

    def __len__(self) -> int:
        return len(self.layers)


def make_sketch(
    base_seed: Seed,
    shapes: Sequence[LayerShape],
    v_kind: SamplerKind,
    step: int,
    period: int,
) -> PerturbationSketch:
    """Sketch for one optimizer step: U keyed by (layer, step), V by (layer, period)."""
    entries = tuple(
        LayerSketch(
            seed_u=derive_seed(base_seed, STREAM_U, i, step),
            seed_v=derive_seed(base_seed, STREAM_V, i, period),
            shape=s,
            v_kind=v_kind,
        )
        for i, s in enumerate(shapes)
    )
    return PerturbationSketch(entries)


def regenerate(sketch: PerturbationSketch, layer: int) -> tuple[Matrix, Matrix]:
    """Rebuild (U, V) for one layer from its seeds; nothing is cached."""
    if not (0 <= layer < len(sketch.layers)):
        raise IndexError(f"layer index {layer} out of range for {len(sketch.layers)} layers")
    entry = sketch.layers[layer]
    u = sample_gaussian(entry.seed_u, entry.shape.m, entry.shape.r)
    v = sample_v(entry.seed_v, entry.shape.n, entry.shape.r, entry.v_kind)
    return u, v
