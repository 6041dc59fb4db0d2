"""Command-line entry point: ``parisilab {eval,grad,minimize,sweep,probe,lmnorm}``.

Exit codes: 0 success, 1 an asserted property was violated, 2 bad configuration.
Every report goes to stdout as JSON; with ``--out DIR`` the same content (plus
CSV companions) is written atomically into DIR.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import lmnorm, optimize, parisi, probes
from .model import ConfigError, ModelSpec, StepOrderParameter, model_from_entries, parse_key_values, validate_step
from .numerics import DEFAULT_POINTS, DEFAULT_QUAD_ORDER, DEFAULT_SAFETY_SIGMAS, Grid, HermiteRule, build_grid
from .reports import atomic_write, json_lines, to_csv, to_json

log = logging.getLogger("parisilab")

COMMANDS = ("eval", "grad", "minimize", "sweep", "probe", "lmnorm")
PROBES = ("one-sided", "u-monotonicity", "midpoint", "function-classes", "l1-continuity")

MODEL_KEYS = {"xi.kind", "xi.terms", "phi.kind", "phi.table", "field.h", "step.m", "step.q"}

# key -> (type, default, predicate, description of the constraint)
NUMERIC_KEYS: dict[str, tuple[type, object, Callable, str]] = {
    "numeric.grid_points": (int, DEFAULT_POINTS, lambda v: v >= 5 and v % 2 == 1, "an odd integer >= 5"),
    "numeric.quad_order": (int, DEFAULT_QUAD_ORDER, lambda v: v >= 1, "a positive integer"),
    "numeric.safety_sigmas": (float, float(DEFAULT_SAFETY_SIGMAS), lambda v: v > 0, "positive"),
    "numeric.seed": (int, 0, lambda v: v >= 0, "a nonnegative integer"),
    "numeric.trials": (int, 20, lambda v: v >= 1, "a positive integer"),
    "numeric.k": (int, 3, lambda v: v >= 1, "a positive integer"),
    "optimizer.k": (int, 2, lambda v: v >= 1, "a positive integer"),
    "optimizer.k_max": (int, 3, lambda v: v >= 1, "a positive integer"),
    "optimizer.max_iters": (int, 200, lambda v: v >= 1, "a positive integer"),
    "optimizer.grad_tol": (float, 1e-6, lambda v: v > 0, "positive"),
    "optimizer.step_init": (float, 1.0, lambda v: v > 0, "positive"),
    "optimizer.backtrack_factor": (float, 0.5, lambda v: 0 < v < 1, "in (0, 1)"),
    "optimizer.starts": (int, 5, lambda v: v >= 1, "a positive integer"),
    "lmnorm.dim": (int, 1, lambda v: v >= 1, "a positive integer"),
    "lmnorm.mc_samples": (int, 1_000_000, lambda v: v >= 100_000, "an integer >= 100000"),
}

# CLI flag dest -> config key it overrides
FLAG_KEYS = {
    "grid_points": "numeric.grid_points",
    "quad_order": "numeric.quad_order",
    "seed": "numeric.seed",
    "trials": "numeric.trials",
    "k": None,  # routed per command below
    "k_max": "optimizer.k_max",
    "max_iters": "optimizer.max_iters",
    "starts": "optimizer.starts",
    "dim": "lmnorm.dim",
    "mc_samples": "lmnorm.mc_samples",
}


@dataclass
class RunConfig:
    command: str
    model: ModelSpec
    step: StepOrderParameter | None
    settings: dict
    out: Path | None = None
    probe: str = "all"
    options: dict = field(default_factory=dict)

    def grid(self) -> Grid:
        return build_grid(self.model, self.settings["numeric.safety_sigmas"], self.settings["numeric.grid_points"])

    def rule(self) -> HermiteRule:
        return HermiteRule.of_order(self.settings["numeric.quad_order"])


@dataclass
class Outcome:
    stdout: str
    files: dict[str, str] = field(default_factory=dict)
    violated: bool = False


def _parse_floats(key: str, text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(key, f"expected comma-separated numbers, got {text!r}") from None


def _coerce(key: str, raw) -> object:
    kind, _, ok, what = NUMERIC_KEYS[key]
    try:
        value = kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {what}, got {raw!r}") from None
    if not ok(value):
        raise ConfigError(key, f"must be {what}, got {raw!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="model/config file (key = value lines)")
    common.add_argument("--seed", type=int)
    common.add_argument("--grid-points", type=int)
    common.add_argument("--quad-order", type=int)
    common.add_argument("--out", type=Path, help="directory for report files")
    common.add_argument("--m", help="inline step m values, e.g. '0,0.5,1'")
    common.add_argument("--q", help="inline step q values, e.g. '0,0.3,0.7,1'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="parisilab", description="Parisi functional laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate P_k and the Parisi objective")
    p.add_argument("--no-refine", action="store_true", help="skip the grid-doubling error estimate")

    p = sub.add_parser("grad", parents=[common], help="analytic gradients with a finite-difference check")
    p.add_argument("--no-fd-check", action="store_true")

    for name in ("minimize", "sweep"):
        p = sub.add_parser(name, parents=[common], help=f"{name} the Parisi objective over step parameters")
        if name == "minimize":
            p.add_argument("--k", type=int)
        else:
            p.add_argument("--k-max", type=int)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--starts", type=int)
        p.add_argument("--relax-top", action="store_true", help="do not pin m_k = 1")

    p = sub.add_parser("probe", parents=[common], help="run property probes")
    p.add_argument("which", nargs="?", default="all", choices=PROBES + ("all",))
    p.add_argument("--trials", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--crossing-only", action="store_true", help="midpoint probe: only crossing pairs")

    p = sub.add_parser("lmnorm", parents=[common], help="L_m-norm convexity, cumulant and tail checks")
    p.add_argument("--dim", type=int)
    p.add_argument("--mc-samples", type=int)
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    """Turn parsed arguments into a validated :class:`RunConfig` (raises ConfigError)."""
    entries: dict[str, str] = {}
    base_dir = None
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError("--config", f"file not found: {args.config}")
        entries = parse_key_values(args.config.read_text())
        base_dir = args.config.parent
    for key in entries:
        if key not in MODEL_KEYS and key not in NUMERIC_KEYS:
            raise ConfigError(key, "unknown key")

    settings = {key: _coerce(key, entries.get(key, spec[1])) for key, spec in NUMERIC_KEYS.items()}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "k":
            key = "optimizer.k" if args.command == "minimize" else "numeric.k"
        flag = "--" + dest.replace("_", "-")
        try:
            settings[key] = _coerce(key, value)
        except ConfigError as err:
            raise ConfigError(flag, err.message) from None

    model, step = model_from_entries(entries, base_dir)
    if args.m is not None or args.q is not None:
        if args.m is None or args.q is None:
            raise ConfigError("--m" if args.m is None else "--q", "--m and --q go together")
        step = StepOrderParameter(_parse_floats("--m", args.m), _parse_floats("--q", args.q))

    options = {}
    if args.command in ("eval", "grad", "probe") and step is not None:
        check = validate_step(step, require_top_one=False)
        if not check:
            raise ConfigError("step", check.violation)
    if args.command in ("eval", "grad") and step is None:
        raise ConfigError("step.m", f"'{args.command}' needs a step (step.m/step.q in the config or --m/--q)")
    if args.command == "probe" and args.which == "function-classes" and step is None:
        raise ConfigError("step.m", "the function-classes probe needs a step")
    if args.command == "eval":
        options["refine"] = not args.no_refine
    elif args.command == "grad":
        options["fd_check"] = not args.no_fd_check
    elif args.command in ("minimize", "sweep"):
        options["pin_top"] = not args.relax_top
        if step is not None and args.command == "minimize":
            if step.k != settings["optimizer.k"] and args.k is None:
                settings["optimizer.k"] = step.k
            check = validate_step(step, require_top_one=options["pin_top"])
            if not check:
                raise ConfigError("step", check.violation)
            if step.k != settings["optimizer.k"]:
                raise ConfigError("--k", f"initial step has k={step.k}")
    elif args.command == "probe":
        options["crossing_only"] = args.crossing_only
        if args.crossing_only and args.which in ("midpoint", "all"):
            # a given step fixes the shared q-partition, and with it k
            k = step.k if step is not None else settings["numeric.k"]
            if k < 3:
                raise ConfigError("step.q" if step is not None else "--k", f"crossing pairs need k >= 3, got k={k}")
    return RunConfig(args.command, model, step, settings, args.out, getattr(args, "which", "all"), options)


def _optimizer_config(cfg: RunConfig, k: int) -> optimize.OptimizerConfig:
    s = cfg.settings
    return optimize.OptimizerConfig(
        k=k,
        max_iters=s["optimizer.max_iters"],
        grad_tol=s["optimizer.grad_tol"],
        step_init=s["optimizer.step_init"],
        backtrack_factor=s["optimizer.backtrack_factor"],
        pin_top=cfg.options["pin_top"],
        starts=s["optimizer.starts"],
    )


def _result_dict(res: optimize.MinimizeResult) -> dict:
    return {**res.to_dict(), "dispersion": optimize.dispersion(res)}


def cmd_eval(cfg: RunConfig) -> Outcome:
    report = parisi.parisi_objective(cfg.model, cfg.step, cfg.grid(), cfg.rule(), refine=cfg.options["refine"])
    data = {**report.to_dict(), "step": cfg.step.to_dict()}
    text = to_json(data, indent=2) + "\n"
    return Outcome(text, {"eval.json": text})


def cmd_grad(cfg: RunConfig) -> Outcome:
    report = parisi.gradients(cfg.model, cfg.step, cfg.grid(), cfg.rule(), fd_check=cfg.options["fd_check"])
    data = {**report.to_dict(), "step": cfg.step.to_dict()}
    text = to_json(data, indent=2) + "\n"
    rows = [(l, report.dq[l - 1], report.dm[l - 1], report.u_values[l - 1]) for l in range(1, cfg.step.k + 1)]
    return Outcome(text, {"grad.json": text, "grad.csv": to_csv(("level", "dq", "dm", "u"), rows)})


def cmd_minimize(cfg: RunConfig) -> Outcome:
    k = cfg.settings["optimizer.k"]
    res = optimize.minimize(cfg.model, _optimizer_config(cfg, k), cfg.settings["numeric.seed"], cfg.step, cfg.grid(), cfg.rule())
    text = to_json(_result_dict(res), indent=2) + "\n"
    history = to_csv(("iteration", "value"), res.history)
    return Outcome(text, {"minimize.json": text, "minimize_history.csv": history})


def cmd_sweep(cfg: RunConfig) -> Outcome:
    k_max = cfg.settings["optimizer.k_max"]
    results = optimize.rsb_sweep(cfg.model, k_max, _optimizer_config(cfg, 1), cfg.settings["numeric.seed"], cfg.grid(), cfg.rule())
    records = [{"k": r.step.k, **_result_dict(r)} for r in results]
    rows = [(r.step.k, it, v) for r in results for it, v in r.history]
    text = json_lines(records)
    return Outcome(text, {"sweep.jsonl": text, "sweep_history.csv": to_csv(("k", "iteration", "value"), rows)})


def cmd_probe(cfg: RunConfig) -> Outcome:
    s = cfg.settings
    grid, rule = cfg.grid(), cfg.rule()
    seed, trials, k = s["numeric.seed"], s["numeric.trials"], s["numeric.k"]
    q_shared = cfg.step.q if cfg.step is not None else None
    which = PROBES if cfg.probe == "all" else (cfg.probe,)
    reports, files = [], {}
    for name in which:
        if name == "one-sided":
            rep = probes.probe_one_sided_convexity(cfg.model, q_shared, trials, seed, k, grid=grid, rule=rule)
        elif name == "u-monotonicity":
            rep = probes.probe_u_monotonicity(cfg.model, cfg.step, None, trials, seed, k, grid=grid, rule=rule)
        elif name == "midpoint":
            rep = probes.probe_midpoint_convexity(
                cfg.model, q_shared, trials, seed, k, crossing_only=cfg.options["crossing_only"], grid=grid, rule=rule
            )
            files["midpoint_slacks.jsonl"] = json_lines({"slack": sl, **rec} for sl, rec in zip(rep.slacks, rep.records))
        elif name == "function-classes":
            if cfg.step is None:
                continue
            rep = probes.probe_function_classes(cfg.model, cfg.step, grid, rule)
        else:
            rep = probes.probe_l1_continuity(cfg.model, trials, seed, k, grid=grid, rule=rule)
        reports.append(rep)
    text = json_lines(r.to_dict() for r in reports)
    files["probes.jsonl"] = text
    return Outcome(text, files, violated=any(not r.passed for r in reports))


def cmd_lmnorm(cfg: RunConfig) -> Outcome:
    s = cfg.settings
    sm = lmnorm.ScalarModel.from_model(cfg.model, s["lmnorm.dim"])
    reports = [
        lmnorm.check_log_convexity(sm),
        lmnorm.check_second_derivative_sign(sm),
        lmnorm.check_third_cumulant(sm),
        lmnorm.check_interpolation_bound(sm),
        lmnorm.check_concentration(sm, mc_samples=s["lmnorm.mc_samples"], seed=s["numeric.seed"]),
    ]
    scan = to_csv(("m", "f", "f_second_derivative"), lmnorm.scan(sm))
    text = json_lines(r.to_dict() for r in reports)
    return Outcome(text, {"lmnorm_probes.jsonl": text, "lmnorm_scan.csv": scan}, violated=any(not r.passed for r in reports))


HANDLERS = {
    "eval": cmd_eval,
    "grad": cmd_grad,
    "minimize": cmd_minimize,
    "sweep": cmd_sweep,
    "probe": cmd_probe,
    "lmnorm": cmd_lmnorm,
}


def run(cfg: RunConfig) -> int:
    outcome = HANDLERS[cfg.command](cfg)
    if cfg.out is not None:
        for name, text in sorted(outcome.files.items()):
            atomic_write(cfg.out / name, text)
    sys.stdout.write(outcome.stdout)
    sys.stdout.flush()
    return 1 if outcome.violated else 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as err:
        print(f"configuration error [{err.key}]: {err.message}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
