"""Command-line experiment runner.

Subcommands: ``toy-limit``, ``toy-tv``, ``mixing`` and ``chain``. Each one is
a pure function of its config and seeds; outputs go to ``--out``.

Exit codes: 0 success, 2 config error, 3 infeasible computation, 1 other
failures (e.g. disk writes; partial outputs keep a ``.partial`` suffix).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, _default_limit_kernels, _default_tv_kernels, load_config, load_preset
from .diagnostics import (
    AcceptanceStats,
    energy_summary,
    log_checkpoints,
    tv_curve,
    write_energy_summary_csv,
    write_tv_csv,
)
from .errors import ChainAborted, ConfigError, ContractViolation, InfeasibleError, StateSpaceTooLarge
from .exact import (
    build_transition_matrix,
    enumerate_states,
    exact_target,
    mixing_time_lower_bound,
    pi_alpha,
    stationary_distribution,
    tv_distance,
)
from .samplers import KernelSpec, PNCGConfig, make_kernel, random_state, run_chain

TOOL = f"faithful-mcmc {__version__}"


def _header(schema: str) -> str:
    return f"{TOOL} schema={schema}/v1"


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".partial")
    writer(tmp)
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "Infinity" if x > 0 else ("-Infinity" if x < 0 else "NaN")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    return x


def _space(cfg: ExperimentConfig, model):
    return enumerate_states(model.table, model.n_positions, cfg.state_cap)


def _limiting_distribution(spec: KernelSpec, model, space):
    if spec.name == "pncg" and not spec.adjusted and model.hessian() is not None:
        return pi_alpha(model, space, PNCGConfig(spec.alpha, spec.p))
    return stationary_distribution(build_transition_matrix(spec, model, space))


def toy_limit_rows(cfg: ExperimentConfig) -> list[tuple[str, float, float]]:
    model = cfg.build_model()
    space = _space(cfg, model)
    pi = exact_target(model, space)
    rows = []
    for spec in cfg.kernels or _default_limit_kernels():
        for alpha in cfg.alphas:
            s = replace(spec, alpha=alpha, p=cfg.p)
            rows.append((s.label, alpha, tv_distance(_limiting_distribution(s, model, space), pi)))
    return rows


def cmd_toy_limit(cfg: ExperimentConfig) -> list[Path]:
    rows = toy_limit_rows(cfg)
    out = Path(cfg.out) / "toy_limit.csv"

    def write(path):
        with open(path, "w") as fh:
            fh.write(f"# {_header('toy_limit')}\n")
            fh.write("kernel,alpha,tv\n")
            for kernel, alpha, tv in rows:
                fh.write(f"{kernel},{alpha!r},{tv!r}\n")

    _atomic_write(out, write)
    return [out]


def _initial(cfg, model, rng):
    if cfg.initial is not None:
        try:
            return model.table.state(cfg.initial)
        except ContractViolation as exc:
            raise ConfigError(f"initial: {exc}") from exc
    return random_state(model.table, model.n_positions, rng)


def toy_tv_rows(cfg: ExperimentConfig):
    model = cfg.build_model()
    space = _space(cfg, model)
    pi = exact_target(model, space)
    checkpoints = cfg.checkpoints or log_checkpoints(cfg.steps)
    rows, reference = [], []
    for spec in cfg.kernels or _default_tv_kernels():
        try:
            reference.append((spec.label, tv_distance(_limiting_distribution(spec, model, space), pi)))
        except InfeasibleError:
            reference.append((spec.label, math.nan))
        for seed in cfg.seeds:
            rng = np.random.default_rng(seed)
            trace = run_chain(make_kernel(spec, model), _initial(cfg, model, rng), cfg.steps, rng)
            for step, tv in tv_curve(trace, space, pi, checkpoints):
                rows.append((spec.label, seed, step, tv))
    return rows, reference


def cmd_toy_tv(cfg: ExperimentConfig) -> list[Path]:
    rows, reference = toy_tv_rows(cfg)
    out = Path(cfg.out) / "toy_tv.csv"
    ref = Path(cfg.out) / "toy_tv_reference.csv"
    _atomic_write(out, lambda p: write_tv_csv(p, rows, _header("toy_tv")))

    def write_ref(path):
        with open(path, "w") as fh:
            fh.write(f"# {_header('toy_tv_reference')}\n")
            fh.write("kernel,stationary_tv\n")
            for kernel, tv in reference:
                fh.write(f"{kernel},{tv!r}\n")

    _atomic_write(ref, write_ref)
    return [out, ref]


def mixing_reports(cfg: ExperimentConfig):
    model = cfg.build_model()
    space = _space(cfg, model)
    return [
        mixing_time_lower_bound(model, space, PNCGConfig(alpha, cfg.p), eps, cfg.mixing_cap)
        for alpha in cfg.alphas
        for eps in cfg.epsilons
    ]


def cmd_mixing(cfg: ExperimentConfig) -> list[Path]:
    reports = mixing_reports(cfg)
    doc = {"tool": TOOL, "reports": [_jsonable(r.to_dict()) for r in reports]}
    out = Path(cfg.out) / "mixing.json"

    def write(path):
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    _atomic_write(out, write)
    return [out]


class JsonlTraceWriter:
    """Chain callback streaming one JSON object per step."""

    def __init__(self, fh, emit_states: bool = False):
        self.fh = fh
        self.emit_states = emit_states

    def __call__(self, t, state, record):
        rec = {"t": t, "energy": record.energy, "accepted": bool(record.accepted), "changes": int(record.changes)}
        if self.emit_states:
            rec["state"] = list(state.tokens)
        self.fh.write(json.dumps(rec) + "\n")


def cmd_chain(cfg: ExperimentConfig) -> list[Path]:
    if cfg.kernel is None:
        raise ConfigError("the chain command needs a 'kernel' entry")
    model = cfg.build_model()
    exact_mean = None
    try:
        space = _space(cfg, model)
        exact_mean = float(exact_target(model, space) @ model.energies(space.embeddings))
    except StateSpaceTooLarge:
        pass
    out_dir = Path(cfg.out)
    paths, summary, meta = [], [], []
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        initial = _initial(cfg, model, rng)
        path = out_dir / f"chain_seed{seed}.jsonl"
        partial = path.with_name(path.name + ".partial")
        with open(partial, "w") as fh:
            trace = run_chain(
                make_kernel(cfg.kernel, model), initial, cfg.steps, rng, [JsonlTraceWriter(fh, cfg.emit_states)]
            )
        os.replace(partial, path)
        paths.append(path)
        burn = int(cfg.burn_in_fraction * cfg.steps)
        es = energy_summary(trace, burn)
        summary.append((cfg.kernel.label, seed, es.mean, es.standard_error))
        acc = AcceptanceStats.from_trace(trace)
        meta.append(
            {
                "seed": seed,
                "kernel": cfg.kernel.label,
                "steps": cfg.steps,
                "burn_in": burn,
                "acceptance_rate": acc.rate,
                "self_proposal_fraction": acc.self_proposal_fraction(),
                "switch_step": trace.switch_step,
                "mean_energy": es.mean,
                "energy_variance": es.variance,
                "se": es.standard_error,
                "exact_mean_energy": exact_mean,
            }
        )
    summary_path = out_dir / "chain_summary.csv"
    _atomic_write(summary_path, lambda p: write_energy_summary_csv(p, summary, _header("chain_summary")))
    meta_path = out_dir / "chain_meta.json"

    def write_meta(p):
        with open(p, "w") as fh:
            json.dump(_jsonable({"tool": TOOL, "chains": meta}), fh, indent=2, sort_keys=True)
            fh.write("\n")

    _atomic_write(meta_path, write_meta)
    return paths + [summary_path, meta_path]


COMMANDS = {
    "toy-limit": cmd_toy_limit,
    "toy-tv": cmd_toy_tv,
    "mixing": cmd_mixing,
    "chain": cmd_chain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faithful-mcmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="JSON experiment config")
        src.add_argument("--preset", help="name of a bundled preset config")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides config seeds")
        p.add_argument("--out", type=Path, help="output directory; overrides config 'out'")
        p.add_argument("--emit-states", action="store_true", help="include token lists in JSONL traces")
        p.add_argument("--cap", type=int, help="maximum enumerable state-space size")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    if args.seed:
        if any(s < 0 for s in args.seed) or len(set(args.seed)) != len(args.seed):
            raise ConfigError("--seed values must be distinct non-negative integers")
        cfg.seeds = list(args.seed)
    if args.out is not None:
        cfg.out = str(args.out)
    if args.emit_states:
        cfg.emit_states = True
    if args.cap is not None:
        if args.cap < 1:
            raise ConfigError("--cap must be a positive integer")
        cfg.state_cap = args.cap
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](cfg)
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except ChainAborted as exc:
        print(f"chain aborted: {exc}; partial outputs are left with a .partial suffix", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"write failed: {exc}; partial outputs are left with a .partial suffix", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
