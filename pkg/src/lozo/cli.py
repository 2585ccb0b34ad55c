"""Benchmark CLI: run experiments, verify properties, compare algorithms.

Subcommands:
    run      execute one configured experiment, writing a CSV of per-step
             records and a JSON summary (atomically, LF line endings)
    verify   run the property-check battery at fast or full level
    compare  run several configs on one problem and tabulate evaluations
             needed to reach a target loss

Exit codes: 0 success, 1 check or step failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import checks, optimizers
from .estimators import EvaluationError
from .linalg import ParamSet
from .optimizers import OptimizerConfig, StepError, state_footprint
from .problems import ProblemSpec, make_problem
from .sampling import SamplerKind

_SAMPLER_NAMES = {k.value: k for k in SamplerKind}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    algo: str
    optimizer: OptimizerConfig
    eval_every: int = 1
    output_path: str = ""

    def to_dict(self) -> dict:
        opt = self.optimizer
        return {
            "problem": self.problem.to_dict(),
            "algo": self.algo,
            "optimizer": {
                "alpha": opt.alpha,
                "epsilon": opt.epsilon,
                "nu": opt.nu,
                "ranks": list(opt.ranks) if opt.ranks is not None else None,
                "beta": opt.beta,
                "total_steps": opt.total_steps,
                "base_seed": opt.base_seed,
                "v_kind": opt.v_kind.value,
            },
            "eval_every": self.eval_every,
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _reject_unknown(d, {"problem", "algo", "optimizer", "eval_every", "output_path"}, "config")
        _reject_unknown(
            d.get("problem", {}),
            {"kind", "shapes", "data_seed", "noise_scale", "num_samples", "true_rank"},
            "problem",
        )
        _reject_unknown(
            d.get("optimizer", {}),
            {"alpha", "epsilon", "nu", "ranks", "beta", "total_steps", "base_seed", "v_kind"},
            "optimizer",
        )
        opt = d["optimizer"]
        ranks = opt.get("ranks")
        try:
            optimizer = OptimizerConfig(
                alpha=float(opt["alpha"]),
                epsilon=float(opt.get("epsilon", 1e-3)),
                nu=int(opt.get("nu", 50)),
                ranks=tuple(int(r) for r in ranks) if ranks is not None else None,
                beta=float(opt.get("beta", 0.9)),
                total_steps=int(opt["total_steps"]),
                base_seed=int(opt["base_seed"]),
                v_kind=_sampler(opt.get("v_kind", "normal")),
            )
        except KeyError as e:
            raise ConfigError(f"missing required optimizer key: {e.args[0]}") from e
        algo = d.get("algo", "lozo")
        if algo not in optimizers.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algo!r}; expected one of {optimizers.ALGORITHMS}")
        try:
            spec = ProblemSpec.from_dict(d["problem"])
        except KeyError as e:
            raise ConfigError(f"missing required problem key: {e.args[0]}") from e
        return cls(
            problem=spec,
            algo=algo,
            optimizer=optimizer,
            eval_every=int(d.get("eval_every", 1)),
            output_path=str(d.get("output_path", "")),
        )


def _reject_unknown(d: dict, allowed: set[str], where: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where} section")


def _sampler(name: str) -> SamplerKind:
    if name not in _SAMPLER_NAMES:
        raise ConfigError(f"unknown sampler {name!r}; expected one of {sorted(_SAMPLER_NAMES)}")
    return _SAMPLER_NAMES[name]


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        m, n = text.lower().split("x")
        return int(m), int(n)
    except ValueError as e:
        raise ConfigError(f"malformed --shape value {text!r}; expected MxN") from e


def _experiment_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lozo-bench run", add_help=False)
    p.add_argument("--config", type=str, default=None, help="JSON config file; flags override its values")
    p.add_argument("--problem", choices=["quadratic", "planted", "logistic", "mlp"], default=None)
    p.add_argument("--shape", action="append", default=None, help="layer shape MxN, repeatable")
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="problem noise scale")
    p.add_argument("--num-samples", type=int, default=None)
    p.add_argument("--true-rank", type=int, default=None, help="planted gradient rank")
    p.add_argument("--algo", choices=list(optimizers.ALGORITHMS), default=None)
    p.add_argument("--rank", type=int, default=None, help="perturbation rank r")
    p.add_argument("--nu", type=int, default=None, help="subspace resample interval")
    p.add_argument("--eps", type=float, default=None, help="perturbation scale epsilon")
    p.add_argument("--lr", type=float, default=None, help="learning rate (see --lr-convention)")
    p.add_argument(
        "--lr-convention",
        choices=["direct", "subspace"],
        default=None,
        help="direct: --lr is the update step alpha; subspace: --lr is alpha/r "
        "(the convention used by published low-rank tuning grids)",
    )
    p.add_argument("--beta", type=float, default=None, help="momentum coefficient")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="base seed (64-bit)")
    p.add_argument("--sampler", choices=sorted(_SAMPLER_NAMES), default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output stem; writes <out>.csv and <out>.json")
    return p


def parse_config(argv: Sequence[str]) -> ExperimentConfig:
    """Build an ExperimentConfig from flags, optionally layered over a JSON file.

    Flags override file values. Unknown JSON keys and invariant violations
    (nu < 1, nonpositive epsilon, ...) are rejected with a named error.
    """
    parser = _experiment_parser()
    try:
        args, extra = parser.parse_known_args(list(argv))
    except SystemExit as e:  # argparse already printed a message
        raise ConfigError("invalid experiment flags") from e
    if extra:
        raise ConfigError(f"unknown flag {extra[0]!r}")
    return _config_from_args(args)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if args.config is not None:
        try:
            base = json.loads(Path(args.config).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {args.config}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON in {args.config} at line {e.lineno}: {e.msg}") from e

    d = {
        "problem": dict(base.get("problem", {})),
        "algo": base.get("algo", "lozo"),
        "optimizer": dict(base.get("optimizer", {})),
        "eval_every": base.get("eval_every", 1),
        "output_path": base.get("output_path", ""),
    }
    if args.config is not None:
        _reject_unknown(base, {"problem", "algo", "optimizer", "eval_every", "output_path"}, "config file")

    prob = d["problem"]
    prob.setdefault("kind", "quadratic")
    prob.setdefault("data_seed", 0)
    if args.problem is not None:
        prob["kind"] = args.problem
    if args.shape is not None:
        rank = args.rank if args.rank is not None else 2
        prob["shapes"] = [[m, n, min(rank, m, n)] for m, n in (_parse_shape(s) for s in args.shape)]
    prob.setdefault("shapes", [[16, 16, args.rank if args.rank is not None else 2]])
    if args.data_seed is not None:
        prob["data_seed"] = args.data_seed
    if args.noise is not None:
        prob["noise_scale"] = args.noise
    if args.num_samples is not None:
        prob["num_samples"] = args.num_samples
    if args.true_rank is not None:
        prob["true_rank"] = args.true_rank

    if args.algo is not None:
        d["algo"] = args.algo
    if args.eval_every is not None:
        d["eval_every"] = args.eval_every
    if args.out is not None:
        d["output_path"] = args.out

    opt = d["optimizer"]
    if args.rank is not None:
        opt["ranks"] = [args.rank]
    if args.nu is not None:
        opt["nu"] = args.nu
    if args.eps is not None:
        opt["epsilon"] = args.eps
    if args.lr is not None:
        rank_for_lr = (opt.get("ranks") or [2])[0]
        convention = args.lr_convention or "direct"
        opt["alpha"] = args.lr * (rank_for_lr if convention == "subspace" else 1)
    if args.beta is not None:
        opt["beta"] = args.beta
    if args.steps is not None:
        opt["total_steps"] = args.steps
    if args.seed is not None:
        opt["base_seed"] = args.seed
    if args.sampler is not None:
        opt["v_kind"] = args.sampler
    opt.setdefault("base_seed", 0)
    if "alpha" not in opt:
        raise ConfigError("missing required key: --lr (or optimizer.alpha in the config file)")
    if "total_steps" not in opt:
        raise ConfigError("missing required key: --steps (or optimizer.total_steps in the config file)")

    try:
        return ExperimentConfig.from_dict(d)
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_experiment(config: ExperimentConfig, timing: str = "deterministic") -> dict:
    """Run one experiment and write <out>.csv and <out>.json.

    With timing="deterministic" (the default) the wall_ms column is written as
    0.0 so byte-identical reruns stay byte-identical; timing="live" writes the
    measured per-step times and sacrifices that guarantee.
    """
    if timing not in ("deterministic", "live"):
        raise ConfigError(f"unknown timing mode {timing!r}")
    oracle = make_problem(config.problem)
    shapes = config.optimizer.effective_shapes(ParamSet.zeros(config.problem.shapes))
    x = ParamSet.zeros(shapes)
    records = optimizers.run(oracle, x, config.optimizer, config.algo, eval_every=config.eval_every)

    lines = ["step,loss,fd_scalar_abs,est_norm,wall_ms"]
    for rec in records:
        wall = rec.wall_ms if timing == "live" else 0.0
        lines.append(f"{rec.step},{rec.loss!r},{rec.fd_scalar_abs!r},{rec.est_norm!r},{wall!r}")
    csv_text = "\n".join(lines) + "\n"

    losses = [rec.loss for rec in records]
    initial = oracle.eval_metric(ParamSet.zeros(shapes))
    summary = {
        "final_loss": losses[-1] if losses else initial,
        "best_loss": min(losses) if losses else initial,
        "total_evals": 2 * config.optimizer.total_steps,
        "footprint_elements": state_footprint(config.algo, shapes),
        "seed": config.optimizer.base_seed,
    }
    if config.output_path:
        stem = Path(config.output_path)
        _atomic_write(stem.with_suffix(".csv"), csv_text)
        _atomic_write(stem.with_suffix(".json"), json.dumps(summary, sort_keys=True) + "\n")
    return summary


def compare_algorithms(
    configs: Sequence[ExperimentConfig], target_loss: float, trailing: int = 10
) -> list[tuple[str, object, float]]:
    """Run each config on the shared problem; tabulate evaluations to target.

    Rows are (algo, evals_to_target or "not reached", final_loss). All configs
    must describe the same problem so the race is meaningful.
    """
    if not configs:
        raise ConfigError("compare needs at least one config")
    first = configs[0].problem.to_dict()
    for cfg in configs[1:]:
        if cfg.problem.to_dict() != first:
            raise ConfigError("compare requires all configs to share the same problem")
    table: list[tuple[str, object, float]] = []
    for cfg in configs:
        oracle = make_problem(cfg.problem)
        shapes = cfg.optimizer.effective_shapes(ParamSet.zeros(cfg.problem.shapes))
        x = ParamSet.zeros(shapes)
        records = optimizers.run(oracle, x, cfg.optimizer, cfg.algo, eval_every=cfg.eval_every)
        e2t = checks.evals_to_target(records, target_loss, trailing=trailing)
        final = records[-1].loss if records else oracle.eval_metric(x)
        table.append((cfg.algo, e2t if e2t is not None else "not reached", final))
    return table


FAST_BUDGET_SECONDS = 120.0


def verify_suite(level: str = "fast") -> tuple[list[checks.CheckResult], bool]:
    """Run the property-check battery; prints one line per check."""
    if level not in ("fast", "full"):
        raise ConfigError(f"unknown verify level {level!r}; expected fast or full")
    started = time.perf_counter()
    if level == "fast":
        battery = [
            lambda: checks.smoke_public_surface(),
            lambda: checks.lge_unbiasedness(num_sketches=50_000, shape=(6, 4), rank=2),
            lambda: checks.lge_rank_bound(num_evals=200),
            lambda: checks.lazy_accumulation_rank(nus=(5, 10), num_seeds=2, periods=3),
            lambda: checks.subspace_equivalence(nu=10, periods=5),
            lambda: checks.momentum_projection_agreement(trials=30),
            lambda: checks.perturb_restore_drift(num_calls=2000),
            lambda: checks.footprint_ratio(),
            lambda: checks.nu1_matches_vanilla(steps=100),
            lambda: checks.cge_rge_exactness(),
            lambda: checks.run_determinism(steps=60),
        ]
    else:
        battery = [
            lambda: checks.smoke_public_surface(),
            lambda: checks.lge_unbiasedness(num_sketches=100_000, shape=(8, 6), rank=2),
            lambda: checks.lge_rank_bound(num_evals=1000),
            lambda: checks.lazy_accumulation_rank(nus=(10, 50), num_seeds=5, periods=4),
            lambda: checks.subspace_equivalence(nu=10, periods=5),
            lambda: checks.momentum_projection_agreement(trials=100),
            lambda: checks.perturb_restore_drift(num_calls=10_000),
            lambda: checks.footprint_ratio(),
            lambda: checks.nu1_matches_vanilla(steps=200),
            lambda: checks.cge_rge_exactness(),
            lambda: checks.run_determinism(steps=120),
            lambda: checks.lozo_vs_rge(),
        ]
    results = []
    for make in battery:
        res = make()
        print(res.line())
        results.append(res)
    elapsed = time.perf_counter() - started
    all_passed = all(r.passed for r in results)
    print(f"{'OK' if all_passed else 'FAILED'}: {sum(r.passed for r in results)}/{len(results)} checks in {elapsed:.1f} s")
    return results, all_passed


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="lozo-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment", add_help=True, parents=[_experiment_parser()])
    run_p.add_argument("--timing", choices=["deterministic", "live"], default="deterministic")

    verify_p = sub.add_parser("verify", help="run the property-check battery")
    verify_p.add_argument("--level", choices=["fast", "full"], default="fast")

    compare_p = sub.add_parser("compare", help="compare algorithms on one problem")
    compare_p.add_argument("--config", required=True, help='JSON file: {"target_loss": x, "configs": [...]}')
    compare_p.add_argument("--out", default=None, help="optional CSV output path for the table")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = _config_from_args(args)
            summary = run_experiment(config, timing=args.timing)
            print(json.dumps(summary, sort_keys=True))
            return 0
        if args.command == "verify":
            _, ok = verify_suite(args.level)
            return 0 if ok else 1
        if args.command == "compare":
            blob = json.loads(Path(args.config).read_text())
            _reject_unknown(blob, {"target_loss", "configs"}, "compare file")
            configs = [ExperimentConfig.from_dict(c) for c in blob["configs"]]
            table = compare_algorithms(configs, float(blob["target_loss"]))
            lines = ["algo,evals_to_target,final_loss"]
            for algo, e2t, final in table:
                print(f"{algo:10s} evals_to_target={e2t} final_loss={final:.6g}")
                lines.append(f"{algo},{e2t},{final!r}")
            if args.out:
                _atomic_write(Path(args.out), "\n".join(lines) + "\n")
            return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (StepError, EvaluationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
