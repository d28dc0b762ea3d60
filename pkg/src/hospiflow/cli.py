"""Command-line driver: ``hospiflow {validate,simulate,optimize,analyze}``.

Runs are described by an INI file (see ``fixtures/config.ini``). Every output
file records the tool version, the master seed and a hash of the inputs, and
contains no timestamps, so reruns produce identical bytes.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .data import ArrivalSpec, Scenario, build_scenario, generate_synthetic, parse_cases, parse_field
from .des import OccupancyTrace, simulate
from .errors import ConfigError, DataError, SimulationError
from .objective import SimulationObjective, Weights, evaluate
from .params import ParamSpace, as_vector, read_space, validate_vector
from .sensa import delta_error_study, parameter_grid, removal_experiment, run_importance_study
from .smbo import INFILL_EI, OptimizerConfig, initial_design, random_search_baseline, run
from .stochastic import SeedSpec
from .surrogates import MODEL_TYPES, Design, KrigingConfig, fit_kriging

log = logging.getLogger("hospiflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


# -- configuration -------------------------------------------------------------


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    path: Path
    scenario_path: Path
    space_path: Path
    seed: int
    out: Path
    workers: int
    weights: Weights
    optimizer: OptimizerConfig
    study: configparser.ConfigParser
    digest: str

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.path.parent / p


def _digest(*paths: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _get(section, key, conv, default=None):
    raw = section.get(key, fallback=None)
    if raw is None or raw.strip() == "":
        if default is None:
            raise ConfigError(f"[{section.name}] {key} is required")
        return default
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from None


def load_config(path: str | Path, args: argparse.Namespace | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from None
    for sec in ("run", "weights", "optimizer"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    runs = cp["run"]
    base = path.parent

    def rel(v: str) -> Path:
        p = Path(v)
        return p if p.is_absolute() else base / p

    scenario_path = rel(_get(runs, "scenario", str))
    space_path = rel(_get(runs, "parameters", str))
    for p in (scenario_path, space_path):
        if not p.is_file():
            raise ConfigError(f"referenced file not found: {p}")

    a = args or argparse.Namespace()
    pick = lambda name, default: default if getattr(a, name, None) is None else getattr(a, name)  # noqa: E731
    seed = pick("seed", _get(runs, "seed", int, 0))
    out = Path(pick("out", None) or rel(_get(runs, "out", str, "out")))
    workers = pick("workers", _get(runs, "workers", int, 1))
    if workers < 1:
        raise ConfigError("workers must be at least 1")

    w = cp["weights"]
    weights = Weights(_get(w, "bed", float, 2.0), _get(w, "icu", float, 4.0), _get(w, "vent", float, 8.0))

    o = cp["optimizer"]
    exclude = pick("exclude", None)
    mask = _ints(exclude) if exclude is not None else _ints(o.get("exclude", ""))
    init = pick("init", _get(o, "init", int, -1))
    opt = OptimizerConfig(
        budget=pick("budget", _get(o, "budget", int, 100)),
        init_size=None if init < 0 else init,
        infill=_get(o, "infill", str, INFILL_EI),
        replicates=pick("replicates", _get(o, "replicates", int, 5)),
        mask=frozenset(mask),
        starts=_get(o, "starts", int, 200),
        steps=_get(o, "steps", int, 50),
        seed=seed,
        workers=workers,
    )
    if opt.replicates < 1:
        raise ConfigError("replicates must be at least 1")
    return RunConfig(
        path, scenario_path, space_path, seed, out, workers, weights, opt, cp,
        _digest(path, scenario_path, space_path),
    )


def load_space(cfg: RunConfig) -> ParamSpace:
    try:
        return read_space(cfg.space_path)
    except ValueError as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None


def _date(s: str) -> date:
    return date.fromisoformat(s)


def load_scenario(cfg: RunConfig, space: ParamSpace) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read(cfg.scenario_path, encoding="utf-8")
    if not cp.has_section("scenario"):
        raise ConfigError(f"{cfg.scenario_path}: missing [scenario] section")
    s = cp["scenario"]
    kind = _get(s, "kind", str)
    warmup = _get(s, "warmup_days", int, 28)
    here = cfg.scenario_path.parent

    def rel(v: str) -> Path:
        p = Path(v)
        return p if p.is_absolute() else here / p

    if kind == "synthetic":
        spec = ArrivalSpec.constant(
            _get(s, "cases_per_day", int), _get(s, "days", int), warmup_days=warmup,
            start_date=_get(s, "start_date", _date, date(2020, 10, 12)),
        )
        truth = s.get("truth", "").strip()
        x_true = read_vector(rel(truth), space) if truth else space.defaults
        return generate_synthetic(x_true, spec, _get(s, "data_seed", int, 0), space.graph)
    if kind == "files":
        strict = _get(s, "strict", lambda v: v.lower() in ("1", "true", "yes"), True)
        cases = parse_cases(rel(_get(s, "cases", str)), strict=strict).records
        field = parse_field(rel(_get(s, "field", str)), strict=strict).records
        return build_scenario(
            cases, field, s.get("region", "*").strip(),
            _get(s, "case_start", _date), _get(s, "case_end", _date),
            _get(s, "field_start", _date), _get(s, "field_end", _date), warmup,
        )
    raise ConfigError(f"unknown scenario kind {kind!r} (expected files or synthetic)")


def read_vector(path: Path, space: ParamSpace) -> np.ndarray:
    """Parameter vector from a CSV with ``index,value`` rows, or the best point of a record JSON."""
    if not path.is_file():
        raise ConfigError(f"parameter vector file not found: {path}")
    if path.suffix == ".json":
        rec = json.loads(path.read_text())
        ok = [e for e in rec.get("evaluations", []) if e.get("error") is None]
        if not ok:
            raise ConfigError(f"{path}: record has no successful evaluation")
        return as_vector(min(ok, key=lambda e: e["score"])["x"])
    x = space.defaults.copy()
    rows = [r for r in csv.reader(io.StringIO(path.read_text())) if r and not r[0].startswith("#")]
    for r in rows[1:]:
        try:
            x[int(r[0]) - 1] = float(r[1])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: bad row {','.join(r)!r}") from None
    return x


# -- output --------------------------------------------------------------------


def _header(cfg: RunConfig, command: str) -> str:
    return f"# tool=hospiflow-{__version__} command={command} seed={cfg.seed} config={cfg.digest}\n"


def _meta(cfg: RunConfig, command: str) -> dict:
    return {"tool": f"hospiflow-{__version__}", "command": command, "seed": cfg.seed, "config": cfg.digest}


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    p = cfg.out / name
    p.write_text(text, encoding="utf-8")
    return p


def _write_csv(cfg: RunConfig, command: str, name: str, body: str) -> Path:
    return _write(cfg, name, _header(cfg, command) + body)


def _write_json(cfg: RunConfig, command: str, name: str, payload: dict) -> Path:
    return _write(cfg, name, json.dumps({"meta": _meta(cfg, command), **payload}, indent=2, sort_keys=True) + "\n")


# -- commands --------------------------------------------------------------------


def cmd_validate(cfg: RunConfig, args) -> int:
    space = load_space(cfg)
    problems = validate_vector(space, space.defaults)
    if problems:
        raise ConfigError("defaults invalid: " + "; ".join(map(str, problems)))
    scenario = load_scenario(cfg, space)
    t0, t1 = scenario.eval_days
    print(f"ok: {len(scenario.arrivals)} arrivals, horizon {scenario.horizon} days, evaluation days {t0}..{t1}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    space = load_space(cfg)
    source = args.x or "defaults"
    if source == "defaults":
        x = space.defaults
    elif source == "best":
        x = read_vector(cfg.out / "record.json", space)
    else:
        x = read_vector(Path(source), space)
    problems = validate_vector(space, x)
    if problems:
        raise ConfigError("invalid parameter vector: " + "; ".join(map(str, problems)))
    scenario = load_scenario(cfg, space)
    t0, t1 = scenario.eval_days
    try:
        trace = simulate(scenario.arrivals, x, space.graph, SeedSpec(cfg.seed, "replicate", 0, 0), cfg.workers)
        result = evaluate(x, scenario, cfg.weights, cfg.optimizer.replicates, cfg.seed, space, cfg.workers)
    except (ValueError, FloatingPointError) as exc:
        raise SimulationError(str(exc)) from exc
    window = OccupancyTrace(trace.counts[t0 : t1 + 1], t0)
    _write_csv(cfg, "simulate", "trace.csv", window.to_csv())
    _write_json(cfg, "simulate", "score.json", {"x": x.tolist(), "weights": cfg.weights.to_dict(), **result.to_dict()})
    print(f"score {result.mean_score!r}")
    return EXIT_OK


def _objective(cfg: RunConfig, space: ParamSpace, scenario: Scenario) -> SimulationObjective:
    return SimulationObjective(scenario, cfg.weights, cfg.optimizer.replicates, cfg.seed, space, workers=1)


def cmd_optimize(cfg: RunConfig, args) -> int:
    space = load_space(cfg)
    scenario = load_scenario(cfg, space)
    try:
        cfg.optimizer.check(space, design=args.baseline is None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    obj = _objective(cfg, space, scenario)
    if args.baseline == "random":
        rec, stem = random_search_baseline(obj, space, cfg.optimizer), "baseline"
    else:
        rec, stem = run(obj, space, cfg.optimizer), "record"
    for phase, secs in rec.timings.items():
        log.info("%s: %.2fs", phase, secs)
    _write_json(cfg, "optimize", f"{stem}.json", rec.to_dict())
    _write_csv(cfg, "optimize", f"{stem}_trajectory.csv", rec.to_csv())
    print(f"{len(rec)} evaluations, best {rec.final_best!r}")
    return EXIT_OK


def _stored_design(cfg: RunConfig, space: ParamSpace, section: str) -> tuple[Design, dict]:
    sec = cfg.study[section] if cfg.study.has_section(section) else None
    raw = sec.get("design", "").strip() if sec is not None else ""
    path = cfg.resolve(raw) if raw else cfg.out / "record.json"
    if not path.is_file():
        raise ConfigError(f"design record not found: {path} (run optimize first)")
    rec = json.loads(path.read_text())
    ok = [e for e in rec["evaluations"] if e.get("error") is None]
    mask = set(rec.get("config", {}).get("mask", []))
    free = [i for i in range(1, len(space) + 1) if i not in mask]
    X = np.array([e["x"] for e in ok])
    y = np.array([e["score"] for e in ok])
    return Design.from_raw(X, y, space, free), rec


def _section(cfg: RunConfig, name: str):
    if not cfg.study.has_section(name):
        cfg.study.add_section(name)
    return cfg.study[name]


def cmd_analyze(cfg: RunConfig, args) -> int:
    space = load_space(cfg)
    study = args.study
    if study == "importance":
        sec = _section(cfg, "importance")
        design, _ = _stored_design(cfg, space, "importance")
        models = [m.strip() for m in sec.get("models", ",".join(MODEL_TYPES)).split(",") if m.strip()]
        unknown = [m for m in models if m not in MODEL_TYPES]
        if unknown:
            raise ConfigError(f"unknown model types {unknown}")
        report = run_importance_study(design, _get(sec, "runs", int, 20), models, cfg.seed, cfg.workers)
        _write_csv(cfg, "analyze-importance", "importance.csv", report.to_csv(space.names))
        _write_json(cfg, "analyze-importance", "importance.json", report.to_dict())
        for m in report.tables:
            print(f"{m}: top {report.top(m, 5)}")
        return EXIT_OK

    if study == "grid":
        sec = _section(cfg, "grid")
        i, j, m = (args.i or _get(sec, "i", int, 14)), (args.j or _get(sec, "j", int, 13)), _get(sec, "resolution", int, 25)
        design, rec = _stored_design(cfg, space, "grid")
        model = fit_kriging(design, KrigingConfig(), np.random.default_rng(cfg.seed))
        base = read_vector(cfg.out / "record.json", space) if (cfg.out / "record.json").is_file() else space.defaults
        try:
            grid = parameter_grid(model, i, j, base, m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _write_csv(cfg, "analyze-grid", "grid.csv", grid.to_csv())
        print(f"grid x{i} x x{j}: {m}x{m}")
        return EXIT_OK

    scenario = load_scenario(cfg, space)
    obj = _objective(cfg, space, scenario)
    if study == "delta":
        sec = _section(cfg, "delta")
        k = _get(sec, "configs", int, 33)
        path = cfg.out / "record.json"
        if path.is_file():
            rec = json.loads(path.read_text())
            configs = [e["x"] for e in rec["evaluations"] if e["tag"] == "initial"][:k]
        else:
            configs = initial_design(space, replace(cfg.optimizer, init_size=k, budget=max(k, cfg.optimizer.budget)))
        report = delta_error_study(
            configs, obj, space, _get(sec, "delta", float, 0.2), _get(sec, "replicates", int, 10),
            cfg.seed, workers=cfg.workers,
        )
        _write_csv(cfg, "analyze-delta", "delta.csv", report.to_csv(space.names))
        _write_json(cfg, "analyze-delta", "delta.json", report.to_dict())
        print(f"delta error over {len(report.base_errors)} configs")
        return EXIT_OK

    if study == "removal":
        sec = _section(cfg, "removal")
        sets = [[]] + [_ints(s) for s in sec.get("sets", "").split("|") if s.strip()]
        opt = cfg.optimizer
        # reruns may use a smaller budget than the main optimisation
        opt = replace(opt, budget=_get(sec, "budget", int, opt.budget), init_size=_get(sec, "init", int, opt.init_size or 0) or None)
        try:
            opt.check(space)
            table = removal_experiment(space, obj, sets, opt, _get(sec, "repeats", int, 10))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _write_csv(cfg, "analyze-removal", "removal.csv", table.to_csv())
        print(f"removal: {len(table.rows)} exclusion sets")
        return EXIT_OK
    raise ConfigError(f"unknown study {study!r}")


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (INI)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="concurrent evaluations; results do not depend on it")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--replicates", type=int, help="simulator replicates per evaluation")
    common.add_argument("--budget", type=int, help="total expensive evaluations")
    common.add_argument("--init", type=int, help="initial design size")
    common.add_argument("--exclude", help="comma-separated parameter indices fixed at their midpoints")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hospiflow", description="Hospital resource simulation, fitting and sensitivity analysis.")
    p.add_argument("--version", action="version", version=f"hospiflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check config, parameters and data")
    sim = sub.add_parser("simulate", parents=[common], help="simulate one parameter vector")
    sim.add_argument("--x", help="defaults, best (from the record in --out), or a vector CSV / record JSON")
    opt = sub.add_parser("optimize", parents=[common], help="fit parameters to field data")
    opt.add_argument("--baseline", choices=["random"], help="run the random-search baseline instead")
    an = sub.add_parser("analyze", parents=[common], help="sensitivity studies")
    an.add_argument("study", choices=["importance", "delta", "grid", "removal"])
    an.add_argument("i", nargs="?", type=int, help="grid: first parameter index")
    an.add_argument("j", nargs="?", type=int, help="grid: second parameter index")
    return p


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "optimize": cmd_optimize, "analyze": cmd_analyze}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    message = str(exc).strip()
    head = message.splitlines()[0] if message else type(exc).__name__
    print(f"error: {kind}: {head}", file=sys.stderr)
    for extra in message.splitlines()[1:]:
        print(extra, file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DataError as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (SimulationError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
