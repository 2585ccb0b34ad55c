"""Desk-scale test losses with analytic gradients.

Each oracle evaluates F(X; xi) over a fixed finite sample set, so the
population loss is an exact finite average. Where an analytic gradient or the
exact optimum is available it is exposed, which is what lets the estimator and
convergence checks compare against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import estimators
from .linalg import LayerShape, ParamSet, top_singular_values
from .sampling import STREAM_DATA, derive_seed, sample_gaussian


class LossOracle:
    """Scalar loss F(X; xi) over a finite sample set.

    analytic_grad and expected_loss are optional; problems without them (the
    tiny MLP) fall back to finite differences in tests and diagnostics.
    """

    def __init__(
        self,
        name: str,
        num_samples: int,
        eval_fn: Callable[[ParamSet, int], float],
        grad_fn: Optional[Callable[[ParamSet, int], ParamSet]] = None,
        expected_fn: Optional[Callable[[ParamSet], float]] = None,
        optimal_loss: Optional[float] = None,
    ):
        if num_samples < 1:
            raise ValueError("num_samples must be positive")
        self.name = name
        self.num_samples = num_samples
        self._eval_fn = eval_fn
        self._grad_fn = grad_fn
        self._expected_fn = expected_fn
        self.optimal_loss = optimal_loss

    def evaluate(self, x: ParamSet, xi: int) -> float:
        if not (0 <= xi < self.num_samples):
            raise ValueError(f"sample index {xi} out of range [0, {self.num_samples})")
        return float(self._eval_fn(x, xi))

    @property
    def has_analytic_grad(self) -> bool:
        return self._grad_fn is not None

    def analytic_grad(self, x: ParamSet, xi: int) -> ParamSet:
        if self._grad_fn is None:
            raise ValueError(f"problem {self.name!r} has no analytic gradient")
        return self._grad_fn(x, xi)

    @property
    def has_expected_loss(self) -> bool:
        return self._expected_fn is not None

    def expected_loss(self, x: ParamSet) -> float:
        if self._expected_fn is None:
            raise ValueError(f"problem {self.name!r} has no expected loss")
        return float(self._expected_fn(x))

    def eval_metric(self, x: ParamSet) -> float:
        """Evaluation-time loss: the exact finite average when defined."""
        if self._expected_fn is not None:
            return float(self._expected_fn(x))
        return self.evaluate(x, 0)


@dataclass(frozen=True)
class ProblemSpec:
    """Serializable description of a test problem for the CLI."""

    kind: str
    shapes: tuple[LayerShape, ...]
    data_seed: int
    noise_scale: float = 0.0
    num_samples: int = 0  # 0 means the problem family default
    true_rank: int = 2

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "shapes": [[s.m, s.n, s.r] for s in self.shapes],
            "data_seed": self.data_seed,
            "noise_scale": self.noise_scale,
            "num_samples": self.num_samples,
            "true_rank": self.true_rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(
            kind=d["kind"],
            shapes=tuple(LayerShape(*row) for row in d["shapes"]),
            data_seed=int(d["data_seed"]),
            noise_scale=float(d.get("noise_scale", 0.0)),
            num_samples=int(d.get("num_samples", 0)),
            true_rank=int(d.get("true_rank", 2)),
        )


def _normalize_shapes(shape) -> list[LayerShape]:
    if isinstance(shape, LayerShape):
        return [shape]
    return list(shape)


def make_quadratic(shape, data_seed: int, noise_scale: float = 0.0, num_samples: int = 8) -> LossOracle:
    """F(X; xi) = 1/2 ||X - A||_F^2 + <G_xi, X> with mean-centered noise G_xi.

    The noise matrices sum to zero over the sample set, so the expected loss
    is exactly 1/2 ||X - A||^2, minimized at X = A with value 0.
    """
    shapes = _normalize_shapes(shape)
    targets = [sample_gaussian(derive_seed(data_seed, STREAM_DATA, li), s.m, s.n) for li, s in enumerate(shapes)]
    noise = [
        [
            noise_scale * sample_gaussian(derive_seed(data_seed, STREAM_DATA, 1 + xi, li), s.m, s.n)
            for li, s in enumerate(shapes)
        ]
        for xi in range(num_samples)
    ]
    for li in range(len(shapes)):
        mean = sum(noise[xi][li] for xi in range(num_samples)) / num_samples
        for xi in range(num_samples):
            noise[xi][li] = noise[xi][li] - mean

    def eval_fn(x: ParamSet, xi: int) -> float:
        total = 0.0
        for a, t, g in zip(x.layers, targets, noise[xi]):
            diff = a - t
            total += 0.5 * float(np.vdot(diff, diff)) + float(np.vdot(g, a))
        return total

    def grad_fn(x: ParamSet, xi: int) -> ParamSet:
        return ParamSet([a - t + g for a, t, g in zip(x.layers, targets, noise[xi])], x.shapes)

    def expected_fn(x: ParamSet) -> float:
        return sum(0.5 * float(np.vdot(a - t, a - t)) for a, t in zip(x.layers, targets))

    oracle = LossOracle("quadratic", num_samples, eval_fn, grad_fn, expected_fn, optimal_loss=0.0)
    oracle.targets = targets
    return oracle


def make_planted_low_rank(
    shape,
    true_rank: int,
    data_seed: int,
    noise_scale: float = 1.0,
    num_batches: int = 128,
) -> LossOracle:
    """Bilinear regression whose gradient is a sum of true_rank outer products.

    Each batch holds true_rank antithetic pairs (a, b, y0 + d) and
    (a, b, y0 - d) with shared unit feature vectors, the a's orthonormal and
    the b's an orthonormal basis of one fixed true_rank-dimensional row
    subspace. The pair structure makes the noise mean-zero and the planted
    parameters the exact minimizer of every batch loss, so the optimum value
    is known in closed form while every per-batch gradient stays rank
    <= true_rank.
    """
    (s,) = _normalize_shapes(shape)
    m, n, p = s.m, s.n, true_rank
    if not (1 <= p <= min(m, n)):
        raise ValueError(f"true_rank must be in [1, min(m, n)], got {p}")
    root = derive_seed(data_seed, STREAM_DATA, 0xB1)
    w, _ = np.linalg.qr(sample_gaussian(derive_seed(root, 0), n, p))
    x_star = sample_gaussian(derive_seed(root, 1), m, n)
    a_vecs = np.empty((num_batches, p, m))
    b_vecs = np.empty((num_batches, p, n))
    for bi in range(num_batches):
        qa, _ = np.linalg.qr(sample_gaussian(derive_seed(root, 2, bi), m, p))
        qb, _ = np.linalg.qr(sample_gaussian(derive_seed(root, 3, bi), p, p))
        a_vecs[bi] = qa.T
        b_vecs[bi] = (w @ qb).T
    unif = sample_gaussian(derive_seed(root, 4), num_batches, p)
    offsets = noise_scale * (1.0 + 0.5 * np.tanh(unif))  # in noise_scale * (0.5, 1.5)
    y_base = np.einsum("spm,mn,spn->sp", a_vecs, x_star, b_vecs)
    f_star = float(np.mean(np.sum(offsets * offsets, axis=1)))

    a_flat = a_vecs.reshape(num_batches * p, m)
    b_flat = b_vecs.reshape(num_batches * p, n)
    y_flat = y_base.reshape(-1)
    offsets_sq_total = float(np.sum(offsets * offsets))

    def _residual_means(xm: np.ndarray, bi: int) -> np.ndarray:
        return ((a_vecs[bi] @ xm) * b_vecs[bi]).sum(axis=1) - y_base[bi]

    def eval_fn(x: ParamSet, xi: int) -> float:
        v = _residual_means(x.layers[0], xi)
        # pair residuals (v - d), (v + d): 1/2 sum of squares = v^2 + d^2
        return float(np.sum(v * v) + np.sum(offsets[xi] * offsets[xi]))

    def grad_fn(x: ParamSet, xi: int) -> ParamSet:
        v = _residual_means(x.layers[0], xi)
        g = (a_vecs[xi] * (2.0 * v)[:, None]).T @ b_vecs[xi]
        return ParamSet([g], x.shapes)

    def expected_fn(x: ParamSet) -> float:
        v = ((a_flat @ x.layers[0]) * b_flat).sum(axis=1) - y_flat
        return (float(np.dot(v, v)) + offsets_sq_total) / num_batches

    oracle = LossOracle("planted_low_rank", num_batches, eval_fn, grad_fn, expected_fn, optimal_loss=f_star)
    oracle.planted = x_star
    oracle.true_rank = p
    oracle.pair_data = (a_vecs, b_vecs, y_base, offsets)
    return oracle


def make_logistic(
    shape,
    data_seed: int,
    num_batches: int = 16,
    batch_size: int = 16,
    feature_noise: float = 0.8,
) -> LossOracle:
    """Binary cross-entropy on a synthetic Gaussian mixture of matrix features.

    Features are Phi = y * M + noise with a fixed mean pattern M; the score of
    a weight matrix X on a feature is the Frobenius inner product <X, Phi>.
    Each batch is exactly class-balanced.
    """
    (s,) = _normalize_shapes(shape)
    if batch_size % 2 != 0:
        raise ValueError("batch_size must be even so batches are class-balanced")
    root = derive_seed(data_seed, STREAM_DATA, 0xC1)
    mean = sample_gaussian(derive_seed(root, 0), s.m, s.n)
    mean /= np.sqrt(float(np.vdot(mean, mean)))
    labels = np.tile(np.array([1.0, -1.0]), batch_size // 2)
    feats = np.empty((num_batches, batch_size, s.m, s.n))
    for bi in range(num_batches):
        g = sample_gaussian(derive_seed(root, 1, bi), batch_size * s.m, s.n).reshape(batch_size, s.m, s.n)
        feats[bi] = labels[:, None, None] * mean + feature_noise * g / np.sqrt(s.m * s.n)

    def _scores(xm: np.ndarray, bi: int) -> np.ndarray:
        return np.tensordot(feats[bi], xm, axes=([1, 2], [0, 1]))

    def eval_fn(x: ParamSet, xi: int) -> float:
        t = labels * _scores(x.layers[0], xi)
        return float(np.mean(np.logaddexp(0.0, -t)))

    def grad_fn(x: ParamSet, xi: int) -> ParamSet:
        t = labels * _scores(x.layers[0], xi)
        coef = -labels / (1.0 + np.exp(t))  # -y * sigmoid(-y z)
        g = np.tensordot(coef, feats[xi], axes=(0, 0)) / batch_size
        return ParamSet([g], x.shapes)

    def expected_fn(x: ParamSet) -> float:
        return sum(eval_fn(x, bi) for bi in range(num_batches)) / num_batches

    return LossOracle("logistic", num_batches, eval_fn, grad_fn, expected_fn)


def make_tiny_mlp(
    shapes,
    data_seed: int,
    num_batches: int = 8,
    batch_size: int = 16,
    noise_scale: float = 0.05,
    teacher_scale: float = 1.0,
) -> LossOracle:
    """Two-layer tanh network with squared-error head, forward pass only.

    Targets come from a random teacher network of the same architecture; no
    analytic gradient is provided, so gradient checks on this problem use
    central differences.
    """
    s1, s2 = _normalize_shapes(shapes)
    if s2.n != s1.m:
        raise ValueError(f"layer shapes do not compose: {s1.m}x{s1.n} then {s2.m}x{s2.n}")
    hidden, d_in, d_out = s1.m, s1.n, s2.m
    root = derive_seed(data_seed, STREAM_DATA, 0xD1)
    w1_t = teacher_scale * sample_gaussian(derive_seed(root, 0), hidden, d_in) / np.sqrt(d_in)
    w2_t = teacher_scale * sample_gaussian(derive_seed(root, 1), d_out, hidden) / np.sqrt(hidden)
    xs = np.empty((num_batches, batch_size, d_in))
    ys = np.empty((num_batches, batch_size, d_out))
    for bi in range(num_batches):
        xb = sample_gaussian(derive_seed(root, 2, bi), batch_size, d_in)
        noise = noise_scale * sample_gaussian(derive_seed(root, 3, bi), batch_size, d_out)
        xs[bi] = xb
        ys[bi] = np.tanh(xb @ w1_t.T) @ w2_t.T + teacher_scale * noise

    def eval_fn(x: ParamSet, xi: int) -> float:
        w1, w2 = x.layers
        resid = np.tanh(xs[xi] @ w1.T) @ w2.T - ys[xi]
        return 0.5 * float(np.mean(np.sum(resid * resid, axis=1)))

    def expected_fn(x: ParamSet) -> float:
        return sum(eval_fn(x, bi) for bi in range(num_batches)) / num_batches

    return LossOracle("tiny_mlp", num_batches, eval_fn, expected_fn=expected_fn)


def gradient_rank_profile(oracle: LossOracle, x: ParamSet, xi: int, k: int) -> list[list[float]]:
    """Top-k singular values of the true gradient, one list per layer.

    Uses the analytic gradient when available, otherwise coordinate-wise
    central differences with a small step.
    """
    if oracle.has_analytic_grad:
        grad = oracle.analytic_grad(x, xi)
    else:
        grad = estimators.cge(oracle, x, 1e-6, xi)
    return [top_singular_values(g, min(k, min(g.shape))) for g in grad.layers]


def make_problem(spec: ProblemSpec) -> LossOracle:
    """Instantiate the oracle described by a ProblemSpec."""
    if spec.kind == "quadratic":
        return make_quadratic(
            spec.shapes, spec.data_seed, noise_scale=spec.noise_scale, num_samples=spec.num_samples or 8
        )
    if spec.kind == "planted":
        return make_planted_low_rank(
            spec.shapes,
            spec.true_rank,
            spec.data_seed,
            noise_scale=spec.noise_scale if spec.noise_scale > 0 else 1.0,
            num_batches=spec.num_samples or 128,
        )
    if spec.kind == "logistic":
        return make_logistic(spec.shapes, spec.data_seed, num_batches=spec.num_samples or 16)
    if spec.kind == "mlp":
        return make_tiny_mlp(
            spec.shapes, spec.data_seed, num_batches=spec.num_samples or 8, noise_scale=spec.noise_scale
        )
    raise ValueError(f"unknown problem kind {spec.kind!r}")
