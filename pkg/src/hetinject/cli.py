"""Config-driven pipeline: synth | train | attack | eval | adapt | check-grad.

Every command is a pure function of (config, seed, input files). Reports are
JSON with sorted keys and embed the config hash and seed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 budget violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attack import AttackBudget, FakeNodeGenerator, PerturbedGraph, run_attack
from .evaluate import (
    CompatibilityError,
    TargetConfig,
    adapt_to_new_graph,
    clean_report,
    drop_relation_study,
    evaluate,
    train_targets,
    transfer_attack,
)
from .gradcheck import DEFAULT_TOL, run_gradcheck
from .graph import BudgetViolation, GraphError, HeteroGraph, recover_ledger
from .io import load_graph, save_graph
from .numerics import ContractError
from .surrogate import NumericFailure, SurrogateParams, TrainConfig, train_surrogate
from .synth import NodeTypeSpec, RelationSpec, SyntheticSpec, standard_spec, synth_generate

log = logging.getLogger("hetinject")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4, 5
SECTIONS = ("dataset", "surrogate", "attack", "eval", "adapt")
ABLATIONS = {
    "random-edges": {"edge_strategy": "random"},
    "simple-low-degree": {"edge_strategy": "simple"},
}
DEFAULT_TARGETS = ("rgcn-lite", "surrogate-clone")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    unknown = sorted(set(cfg) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    return cfg, p.resolve().parent


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy of plain data
    if args.seed is not None:
        cfg["seed"] = args.seed
    attack = cfg.setdefault("attack", {})
    for flag, key in (("rho", "rho"), ("K", "K"), ("beta", "beta"), ("edge_strategy", "edge_strategy")):
        value = getattr(args, flag, None)
        if value is not None:
            attack[key] = value
    if not attack:
        del cfg["attack"]
    if "seed" not in cfg:
        raise ConfigError("no seed given: set 'seed' in the config or pass --seed")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _build(cls, section: dict, name: str, skip=()):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known - set(skip))
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    try:
        return cls(**{k: v for k, v in section.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def synthetic_spec(d: dict) -> SyntheticSpec:
    d = dict(d)
    preset = d.pop("preset", None)
    try:
        if "node_types" in d:
            d["node_types"] = tuple(NodeTypeSpec(**t) for t in d["node_types"])
        if "relations" in d:
            d["relations"] = tuple(RelationSpec(**r) for r in d["relations"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        if preset == "standard":
            return standard_spec(**d)
        if preset is not None:
            raise ConfigError(f"unknown synthetic preset {preset!r}")
        return SyntheticSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"synthetic spec: {exc}") from None


def _path(root: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else root / p


def load_dataset(section: dict, root: Path, seed: int, name: str = "dataset") -> HeteroGraph:
    """Exactly one source: ``path`` (TSV directory) or ``synthetic`` (spec table)."""
    has_path, has_synth = "path" in section, "synthetic" in section
    if has_path == has_synth:
        raise ConfigError(f"[{name}] needs exactly one of 'path' or 'synthetic'")
    if has_path:
        return load_graph(_path(root, section["path"]))
    spec = synthetic_spec(section["synthetic"])
    return synth_generate(spec, int(section.get("synthetic_seed", seed)))


def budget_from(cfg: dict) -> AttackBudget:
    return _build(AttackBudget, cfg.get("attack", {}), "attack", skip=("surrogate", "ablations"))


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    tc = _build(TrainConfig, cfg.get("surrogate", {}), "surrogate")
    return replace(tc, seed=seed)


def target_config_from(cfg: dict) -> TargetConfig:
    return _build(TargetConfig, cfg.get("eval", {}).get("rgcn", {}), "eval.rgcn")


def _write_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"cannot serialize {type(o).__name__}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=default) + "\n", encoding="utf-8")


def _parallel_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _surrogate_for(cfg: dict, root: Path, g: HeteroGraph, seed: int, section: str) -> SurrogateParams:
    path = cfg.get(section, {}).get("surrogate")
    if path is not None:
        try:
            return SurrogateParams.load(_path(root, path))
        except FileNotFoundError:
            raise GraphError(f"surrogate parameter file not found: {_path(root, path)}") from None
    return train_surrogate(g, train_config_from(cfg, seed))[0]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: dict, root: Path, out: Path, jobs: int) -> dict:
    seed = cfg["seed"]
    section = cfg.get("dataset", {})
    if "synthetic" not in section or "path" in section:
        raise ConfigError("synth needs a [dataset.synthetic] table and no [dataset] path")
    spec = synthetic_spec(section["synthetic"])
    g = synth_generate(spec, seed)
    save_graph(g, out)
    _write_json(out / "spec.json", {"spec": spec.to_dict(), "seed": seed, "config_hash": config_hash(cfg),
                                    "fingerprint": g.fingerprint()})
    return {"nodes": g.num_nodes, "relations": [r.name for r in g.relations]}


def cmd_train(cfg: dict, root: Path, out: Path, jobs: int) -> dict:
    seed = cfg["seed"]
    tc = train_config_from(cfg, seed)
    g = load_dataset(cfg.get("dataset", {}), root, seed)
    params, curve = train_surrogate(g, tc)
    params.meta = {**params.meta, "config_hash": config_hash(cfg)}
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "surrogate.json")
    val = evaluate(params, g, "val") if g.splits["val"].size else (None, None)
    report = {
        "seed": seed,
        "config_hash": config_hash(cfg),
        "train_config": {f.name: getattr(tc, f.name) for f in fields(tc)},
        "epochs_run": len(curve),
        "val_macro_f1": val[0],
        "val_micro_f1": val[1],
        "best_val_micro_f1": params.meta["best_val_micro_f1"],
        "mu": dict(zip([r.name for r in g.relations], params.relation_weights().tolist())),
        "curve": curve,
    }
    _write_json(out / "train_report.json", report)
    return {"val_micro_f1": val[1], "epochs_run": len(curve)}


def _attack_job(job):
    name, g, surrogate, budget, seed = job
    return name, run_attack(g, surrogate, budget, seed)


def cmd_attack(cfg: dict, root: Path, out: Path, jobs: int) -> dict:
    seed = cfg["seed"]
    g = load_dataset(cfg.get("dataset", {}), root, seed)
    budget = budget_from(cfg)
    ablations = cfg.get("attack", {}).get("ablations", [])
    bad = sorted(set(ablations) - set(ABLATIONS))
    if bad:
        raise ConfigError(f"[attack] unknown ablations: {', '.join(bad)}")
    budget.steps(g.num_nodes)  # fail early on an oversized M
    surrogate = _surrogate_for(cfg, root, g, seed, "attack")
    runs = [("attacked", budget),
            ("random", replace(budget, edge_strategy="random", feature_strategy="prototype"))]
    runs += [(f"ablation-{a}", replace(budget, **ABLATIONS[a])) for a in ablations]
    results = dict(_parallel_map(_attack_job, [(n, g, surrogate, b, seed) for n, b in runs], jobs))
    f1 = {"clean": evaluate(surrogate, g)[1]}
    for name, res in results.items():
        save_graph(res.graph, out / name)
        f1[name] = evaluate(surrogate, res.graph)[1]
    main = results["attacked"]
    if main.generators is not None:
        main.generators.save(out / "generators.json")
    trace = main.trace_report()
    trace.update({
        "seed": seed,
        "config_hash": config_hash(cfg),
        "attack_config": budget.to_dict(),
        "variants": [n for n, _ in runs],
        "surrogate_micro_f1": f1,
    })
    _write_json(out / "trace.json", trace)
    return {"injected": len(main.state.ledger), "surrogate_micro_f1": f1}


def _target_job(job):
    kind, g, seed, tc, rc = job
    return train_targets(g, [kind], seed, tc, rc)[0]


def cmd_eval(cfg: dict, root: Path, out: Path, jobs: int) -> dict:
    seed = cfg["seed"]
    section = cfg.get("eval", {})
    unknown = sorted(set(section) - {"targets", "attacked", "random", "drop_relation_study", "surrogate", "rgcn"})
    if unknown:
        raise ConfigError(f"[eval] unknown keys: {', '.join(unknown)}")
    g = load_dataset(cfg.get("dataset", {}), root, seed)
    kinds = list(section.get("targets", DEFAULT_TARGETS))
    tc, rc = train_config_from(cfg, seed), target_config_from(cfg)
    budget = budget_from(cfg)
    targets = _parallel_map(_target_job, [(k, g, seed, tc, rc) for k in kinds], jobs)
    seeds = {"seed": seed, "config_hash": config_hash(cfg)}
    if "attacked" in section:
        perturbed = _perturbed(g, load_graph(_path(root, section["attacked"])), budget)
        baseline = None
        if "random" in section:
            baseline = _perturbed(g, load_graph(_path(root, section["random"])), budget)
        report = transfer_attack(targets, perturbed, baseline, seeds=seeds)
    elif "random" in section:
        raise ConfigError("[eval] 'random' needs 'attacked' as well")
    else:
        report = clean_report(targets, g, seeds=seeds)
    _write_json(out / "report.json", report)
    summary = {m: {v: report["metrics"][m][v]["micro_f1"] for v in report["variants"]} for m in report["models"]}
    if section.get("drop_relation_study", False):
        surrogate = _surrogate_for(cfg, root, g, seed, "eval")
        study = drop_relation_study(g, surrogate, targets)
        study.update(seeds)
        _write_json(out / "relation_study.json", study)
    return summary


def _perturbed(base: HeteroGraph, attacked: HeteroGraph, budget: AttackBudget) -> PerturbedGraph:
    return PerturbedGraph(base, recover_ledger(base, attacked), budget.max_nodes(base.num_nodes), budget.K)


def cmd_adapt(cfg: dict, root: Path, out: Path, jobs: int) -> dict:
    seed = cfg["seed"]
    section = cfg.get("adapt", {})
    unknown = sorted(set(section) - {"generators", "path", "synthetic", "synthetic_seed", "allow_adapter"})
    if unknown:
        raise ConfigError(f"[adapt] unknown keys: {', '.join(unknown)}")
    if "generators" not in section:
        raise ConfigError("[adapt] needs 'generators' (written by the attack command)")
    gen_path = _path(root, section["generators"])
    try:
        generators = FakeNodeGenerator.load(gen_path)
    except FileNotFoundError:
        raise GraphError(f"generator file not found: {gen_path}") from None
    g2 = load_dataset(section, root, seed, name="adapt")
    report = adapt_to_new_graph(generators, g2, budget_from(cfg), seed, train_config_from(cfg, seed),
                                target_config_from(cfg), bool(section.get("allow_adapter", True)))
    report.update({"seed": seed, "config_hash": config_hash(cfg)})
    _write_json(out / "adapt_report.json", report)
    return {k: report[k] for k in ("self_adaptation", "drop_full", "drop_adapted", "within_3_points")}


def cmd_checkgrad(cfg: dict, root: Path, out: Path, jobs: int, instances: int = 10, tol: float = DEFAULT_TOL,
                  sign_flip: bool = False) -> dict:
    report = run_gradcheck(instances, cfg["seed"], tol, sign_flip)
    report.update({"seed": cfg["seed"], "config_hash": config_hash(cfg)})
    _write_json(out / "checkgrad.json", report)
    if not report["passed"]:
        worst = ", ".join(f"{k}={v:.3g}" for k, v in report["max_error"].items() if v > tol)
        raise NumericFailure(f"gradient check failed on {report['failures']}/{instances} instances "
                             f"(tolerance {tol:g}): {worst}")
    return {"passed": True, "max_error": report["max_error"]}


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "adapt": cmd_adapt,
    "check-grad": cmd_checkgrad,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="TOML config with [dataset] [surrogate] [attack] [eval] [adapt]")
    shared.add_argument("--seed", type=int, help="overrides the config seed")
    shared.add_argument("--out", required=True, help="output directory")
    shared.add_argument("--jobs", type=int, default=1, help="parallel workers across ablations / targets")
    shared.add_argument("-v", "--verbose", action="store_true")

    attack_flags = argparse.ArgumentParser(add_help=False)
    attack_flags.add_argument("--rho", type=float)
    attack_flags.add_argument("--K", type=int)
    attack_flags.add_argument("--beta", type=float)
    attack_flags.add_argument("--edge-strategy", dest="edge_strategy", choices=["gradient", "random", "simple"])

    parser = argparse.ArgumentParser(prog="hetinject", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        parents = [shared, attack_flags] if name in ("attack", "eval", "adapt") else [shared]
        p = sub.add_parser(name, parents=parents)
        if name == "check-grad":
            p.add_argument("--instances", type=int, default=10)
            p.add_argument("--tol", type=float, default=DEFAULT_TOL)
            p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw, root = load_config(args.config)
        cfg = apply_overrides(raw, args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(args.out)
        fn = COMMANDS[args.command]
        if args.command == "check-grad":
            summary = fn(cfg, root, out, args.jobs, args.instances, args.tol, args.inject_sign_flip)
        else:
            summary = fn(cfg, root, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetViolation as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphError, ContractError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
