"""Command-line entry point.

Exit codes: 0 success, 1 validation/config error, 2 I/O error, 3 numeric
error. Progress and summaries go to stderr; data only to declared outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from trajood import CURRENT_STEP, SCHEMA_VERSION, __version__
from trajood.complexity import (
    DEFAULT_HORIZON,
    MIN_SPEED,
    complexity_distribution,
    enclosed_mass,
    hdr_levels,
    kde_2d,
)
from trajood.errors import ConfigError, InputError, NumericError, StorageError, TrajoodError
from trajood.homogenize import HomogenizedSample, RejectionReason, cap_complexity, homogenize_scenario
from trajood.ingest import (
    SyntheticConfig,
    generate_synthetic,
    parse_predictions,
    parse_scenarios,
    write_predictions,
    write_scenarios,
    write_text,
)
from trajood.metrics import (
    DELTA_COLUMNS,
    METRICS_COLUMNS,
    aggregate,
    delta_metrics,
    delta_rows,
    evaluate_prediction,
    metric_names,
    metrics_to_rows,
    read_metrics_csv,
    write_csv,
)
from trajood.predictors import predict_constant_velocity, predict_polynomial
from trajood.report import RunRegistry, render_delta_summary, render_table

log = logging.getLogger("trajood")


# --------------------------------------------------------------------------
# flag value parsers
# --------------------------------------------------------------------------


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(conv):
    def parse(text: str):
        try:
            lo, hi = (conv(v) for v in str(text).split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'min,max', got {text!r}") from None
        return (lo, hi)

    return parse


def weight_map(text: str) -> dict[str, float]:
    out = {}
    for item in str(text).split(","):
        if not item.strip():
            continue
        try:
            key, value = item.split("=")
            out[key.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'kind=weight,...', got {text!r}") from None
    return out


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

DEFAULTS = {
    "generate": dict(count=100, steps=91, seed=0, noise_sigma=0.0, maneuver_mix={"constant_velocity": 1.0},
                     maneuver_window=(10, 49), speed_range=(2.0, 15.0), agents=(2, 4), map_elements=4,
                     profile="synthetic"),
    "homogenize": dict(profile="auto"),
    "predict": dict(model="poly", degrees=[1, 2, 3, 4, 5, 6]),
    "eval": dict(k=[1, 6], model_tag="model", train_tag=""),
    "complexity": dict(t_start=1.1, horizon=DEFAULT_HORIZON, masses=[0.3, 0.6, 0.9], grid_resolution=200,
                       min_speed=MIN_SPEED),
    "report table": dict(),
    "report delta": dict(),
}

REQUIRED = {
    "generate": ["out"],
    "homogenize": ["input", "out"],
    "predict": ["input", "out"],
    "eval": ["scenarios", "predictions", "out"],
    "delta": ["id", "ood", "out"],
    "complexity": ["input", "out"],
    "report table": ["runs", "reference", "out"],
    "report delta": ["id", "ood", "out"],
}

INPUT_FILES = {
    "homogenize": ["input"],
    "predict": ["input"],
    "eval": ["scenarios", "predictions"],
    "delta": ["id", "ood"],
    "complexity": ["input"],
}
INPUT_DIRS = {"report table": ["runs"], "report delta": ["id", "ood"]}
OUTPUTS = {
    "generate": ["out"],
    "homogenize": ["out", "rejects"],
    "predict": ["out"],
    "eval": ["out", "records"],
    "delta": ["out"],
    "complexity": ["out", "kde"],
    "report table": ["out"],
    "report delta": ["out"],
}


def _common(p: argparse.ArgumentParser, jobs: bool = False) -> None:
    p.add_argument("--config", help="flat 'key = value' file; command-line flags take precedence")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker processes (default 1)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="trajood", description="Cross-dataset OoD evaluation for trajectory prediction.")
    parser.add_argument("--version", action="version", version=f"trajood {__version__} (scenario schema {SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    p = subs["generate"] = sub.add_parser("generate", help="write a deterministic synthetic corpus")
    _common(p)
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--maneuver-mix", type=weight_map, help="e.g. constant_velocity=1,turn_left=0.5")
    p.add_argument("--maneuver-window", type=_pair(int), help="start,end step")
    p.add_argument("--speed-range", type=_pair(float), help="min,max m/s")
    p.add_argument("--agents", type=_pair(int), help="min,max tracks per scene (incl. ego and focal)")
    p.add_argument("--map-elements", type=int)
    p.add_argument("--profile", choices=["synthetic", "A2", "WO"])

    p = subs["homogenize"] = sub.add_parser("homogenize", help="apply the homogenization protocol")
    _common(p, jobs=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--profile", choices=["a2", "wo", "auto"])
    p.add_argument("--cap-agents", type=int)
    p.add_argument("--cap-map", type=int)
    p.add_argument("--rejects")

    p = subs["predict"] = sub.add_parser("predict", help="run a baseline predictor on homogenized samples")
    _common(p, jobs=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--model", choices=["cv", "poly"])
    p.add_argument("--degrees", type=int_list)

    p = subs["eval"] = sub.add_parser("eval", help="score predictions against homogenized ground truth")
    _common(p, jobs=True)
    p.add_argument("--scenarios")
    p.add_argument("--predictions")
    p.add_argument("--k", type=int_list)
    p.add_argument("--out")
    p.add_argument("--records", help="optional per-sample metrics CSV")
    p.add_argument("--model-tag")
    p.add_argument("--train-tag")
    p.add_argument("--test-tag", help="default: source profile of the scenarios")

    p = subs["delta"] = sub.add_parser("delta", help="OoD minus ID metrics")
    _common(p)
    p.add_argument("--id")
    p.add_argument("--ood")
    p.add_argument("--out")

    p = subs["complexity"] = sub.add_parser("complexity", help="complexity vectors, KDE and HDR levels")
    _common(p)
    p.add_argument("--in", dest="input")
    p.add_argument("--t-start", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out")
    p.add_argument("--kde", help="grid CSV; HDR thresholds go to <stem>.hdr.csv beside it")
    p.add_argument("--masses", type=float_list)
    p.add_argument("--grid-resolution", type=int)
    p.add_argument("--min-speed", type=float)

    p = sub.add_parser("report", help="render result tables")
    rsub = p.add_subparsers(dest="report_command", required=True)
    q = subs["report table"] = rsub.add_parser("table", help="absolute + reference-relative table")
    _common(q)
    q.add_argument("--runs")
    q.add_argument("--reference")
    q.add_argument("--out", help="output base; writes <base>.txt and <base>.csv")
    q = subs["report delta"] = rsub.add_parser("delta", help="ID/OoD delta summary")
    _common(q)
    q.add_argument("--id")
    q.add_argument("--ood")
    q.add_argument("--out", help="output base; writes <base>.txt and <base>.csv")
    return parser, subs


def read_config(path) -> dict[str, str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc.strerror or exc}", path=str(path)) from None
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        values["input" if key == "in" else key] = value
    return values


def resolve_args(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    command = args.command if args.command != "report" else f"report {args.report_command}"
    args.command = command
    sp = subs[command]
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    if args.config:
        for key, text in read_config(args.config).items():
            action = actions.get(key)
            if action is None:
                raise ConfigError(f"unknown key {key!r} in {args.config} for '{command}'")
            if getattr(args, key) is not None:
                continue
            try:
                value = action.type(text) if action.type else text
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"{args.config}: bad value for {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{args.config}: {key!r} must be one of {sorted(action.choices)}")
            setattr(args, key, value)
    for key, value in DEFAULTS.get(command, {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    if getattr(args, "jobs", None) is None:
        args.jobs = 1
    missing = [k for k in REQUIRED[command] if getattr(args, k, None) is None]
    if missing:
        flags = ", ".join("--" + ("in" if k == "input" else k.replace("_", "-")) for k in missing)
        raise ConfigError(f"'{command}' requires {flags}")
    _check_paths(command, args)
    return args


def _check_paths(command: str, args) -> None:
    for key in INPUT_FILES.get(command, []):
        path = Path(getattr(args, key))
        if not path.is_file():
            raise StorageError(f"input file not found: {path}", path=str(path))
    for key in INPUT_DIRS.get(command, []):
        path = Path(getattr(args, key))
        if not path.is_dir():
            raise StorageError(f"input directory not found: {path}", path=str(path))
    for key in OUTPUTS.get(command, []):
        value = getattr(args, key, None)
        if value is None:
            continue
        parent = Path(value).parent
        if not parent.is_dir():
            raise StorageError(f"output directory does not exist: {parent}", path=str(parent))


# --------------------------------------------------------------------------
# workers
# --------------------------------------------------------------------------


def _pmap(func, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [func(x) for x in items]
    chunksize = max(1, len(items) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items, chunksize=chunksize))


def _homogenize_one(raw, profile, cap_agents, cap_map):
    out = homogenize_scenario(raw, profile)
    if isinstance(out, HomogenizedSample) and (cap_agents is not None or cap_map is not None):
        out = cap_complexity(out, cap_agents or 50, cap_map or 80)
    return out


def _predict_one(scenario, model, degrees):
    sample = HomogenizedSample.from_scenario(scenario)
    if model == "cv":
        return predict_constant_velocity(sample, sample.focal_agent_id)
    return predict_polynomial(sample, sample.focal_agent_id, degrees)


def _evaluate_one(pair, ks):
    scenario, pred = pair
    gt = scenario.track(scenario.focal_agent_id).positions[CURRENT_STEP + 1:]
    return evaluate_prediction(pred, gt, ks)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(args) -> None:
    cfg = SyntheticConfig(
        scenario_count=args.count,
        step_count=args.steps,
        maneuver_mix=args.maneuver_mix,
        maneuver_window=tuple(args.maneuver_window),
        speed_range=tuple(args.speed_range),
        noise_sigma=args.noise_sigma,
        agent_count_range=tuple(args.agents),
        map_elements_per_scene=args.map_elements,
        seed=args.seed,
        source_profile=args.profile,
    )
    n = write_scenarios(generate_synthetic(cfg), args.out)
    log.info("generate: wrote %d scenarios to %s", n, args.out)


def cmd_homogenize(args) -> None:
    scenarios = parse_scenarios(args.input)
    profile = None if args.profile == "auto" else args.profile.upper()
    results = _pmap(partial(_homogenize_one, profile=profile, cap_agents=args.cap_agents, cap_map=args.cap_map),
                    scenarios, args.jobs)
    fatal = [(s.scenario_id, r) for s, r in zip(scenarios, results)
             if r in (RejectionReason.TOO_SHORT, RejectionReason.INVALID_SOURCE)]
    if fatal:
        shown = ", ".join(f"{sid} ({r.value})" for sid, r in fatal[:5])
        raise InputError(f"{len(fatal)} scenario(s) cannot be homogenized as {args.profile}: {shown}",
                         code=fatal[0][1].value)
    kept = [r.scenario for r in results if isinstance(r, HomogenizedSample)]
    rejects = [(s.scenario_id, r.value) for s, r in zip(scenarios, results) if isinstance(r, RejectionReason)]
    write_scenarios(kept, args.out)
    if args.rejects:
        write_csv(args.rejects, ["scenario_id", "reason"], rejects)
    reasons = Counter(r for _, r in rejects)
    log.info("homogenize: read=%d kept=%d rejected=%d %s", len(scenarios), len(kept), len(rejects),
             dict(sorted(reasons.items())))


def cmd_predict(args) -> None:
    scenarios = parse_scenarios(args.input)
    preds = _pmap(partial(_predict_one, model=args.model, degrees=tuple(args.degrees)), scenarios, args.jobs)
    write_predictions(preds, args.out)
    log.info("predict: model=%s samples=%d", args.model, len(preds))


def cmd_eval(args) -> None:
    scenarios = parse_scenarios(args.scenarios)
    preds = {(p.scenario_id, p.agent_id): p for p in parse_predictions(args.predictions)}
    pairs = []
    for s in scenarios:
        HomogenizedSample.from_scenario(s)
        pred = preds.get((s.scenario_id, s.focal_agent_id))
        if pred is None:
            raise InputError(f"no prediction for focal agent {s.focal_agent_id} of scenario {s.scenario_id}",
                             code="MISSING_PREDICTION")
        pairs.append((s, pred))
    records = _pmap(partial(_evaluate_one, ks=tuple(args.k)), pairs, args.jobs)
    test_tag = args.test_tag if args.test_tag is not None else (scenarios[0].source_profile.value if scenarios else "")
    dm = aggregate(records, model=args.model_tag, train_set=args.train_tag, test_set=test_tag,
                   names=metric_names(args.k))
    write_csv(args.out, METRICS_COLUMNS, metrics_to_rows(dm))
    if args.records:
        names = metric_names(args.k)
        write_csv(args.records, ["scenario_id", "agent_id", *names],
                  [[r.scenario_id, r.agent_id, *(repr(r.values[n]) for n in names)] for r in records])
    log.info("eval: samples=%d %s", dm.sample_count, {k: round(v, 4) for k, v in dm.values.items()})


def _single_run(path):
    runs = read_metrics_csv(path)
    if len(runs) != 1:
        raise InputError(f"{path} holds {len(runs)} runs, expected exactly one")
    return runs[0]


def cmd_delta(args) -> None:
    deltas = delta_metrics(_single_run(args.id), _single_run(args.ood))
    write_csv(args.out, DELTA_COLUMNS, delta_rows(deltas))
    log.info("delta: %d metrics", len(deltas))


def cmd_complexity(args) -> None:
    scenarios = parse_scenarios(args.input)
    dist = complexity_distribution(scenarios, args.t_start, args.horizon, args.min_speed)
    write_csv(args.out, ["scenario_id", "agent_id", "d_lon", "d_lat", "speed"],
              [[v.scenario_id, v.agent_id, repr(v.d_lon), repr(v.d_lat), repr(v.speed_at_start)] for v in dist.samples])
    log.info("complexity: t_start=%s samples=%d excluded_low_speed=%d excluded_other=%s",
             args.t_start, len(dist.samples), dist.excluded_low_speed, dist.excluded_other)
    if args.kde:
        grid = kde_2d(dist.points(), args.grid_resolution)
        xx, yy = np.meshgrid(grid.x, grid.y)
        write_csv(args.kde, ["x", "y", "density"],
                  ([repr(x), repr(y), repr(d)] for x, y, d in zip(xx.ravel().tolist(), yy.ravel().tolist(),
                                                                  grid.density.ravel().tolist())))
        levels = hdr_levels(grid, args.masses)
        sidecar = Path(args.kde).with_suffix(".hdr.csv")
        write_csv(sidecar, ["mass", "threshold", "enclosed_mass"],
                  [[repr(m), repr(c), repr(enclosed_mass(grid, c))] for m, c in zip(args.masses, levels)])


def _registry(directory) -> RunRegistry:
    reg = RunRegistry()
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise InputError(f"no metrics CSV files in {directory}")
    for path in files:
        for run in read_metrics_csv(path):
            reg.add(run)
    return reg


def _out_base(out: str) -> Path:
    path = Path(out)
    return path.with_suffix("") if path.suffix in (".txt", ".csv") else path


def cmd_report_table(args) -> None:
    reg = _registry(args.runs)
    text, csv_text = render_table(reg, args.reference)
    base = _out_base(args.out)
    write_text(base.with_suffix(".txt"), text)
    write_text(base.with_suffix(".csv"), csv_text)
    log.info("report table: %d runs -> %s.{txt,csv}", len(reg.runs), base)


def cmd_report_delta(args) -> None:
    text, csv_text = render_delta_summary(_registry(args.id), _registry(args.ood))
    base = _out_base(args.out)
    write_text(base.with_suffix(".txt"), text)
    write_text(base.with_suffix(".csv"), csv_text)
    log.info("report delta -> %s.{txt,csv}", base)


COMMANDS = {
    "generate": cmd_generate,
    "homogenize": cmd_homogenize,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "delta": cmd_delta,
    "complexity": cmd_complexity,
    "report table": cmd_report_table,
    "report delta": cmd_report_delta,
}

EXIT_CODES = ((InputError, 1), (StorageError, 2), (NumericError, 3))


def exit_code_for(exc: TrajoodError) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 3


def dispatch(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    try:
        args = resolve_args(argv)
    except SystemExit as exc:  # argparse usage errors and --version
        return 0 if exc.code in (0, None) else 1
    except TrajoodError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    if args.verbose:
        log.setLevel(logging.DEBUG)
    start = time.perf_counter()
    try:
        COMMANDS[args.command](args)
    except TrajoodError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    log.info("%s: done in %.2fs", args.command, time.perf_counter() - start)
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
