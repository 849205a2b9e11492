"""Command-line entry point.

Three subcommands: `gen-data` writes dataset files across the quality
spectrum, `train` runs one experiment into a self-describing run directory
(config echo, manifest, per-seed metrics, summary, checkpoints), and `sweep`
repeats `train` across the values of exactly one config key.

Configuration is a flat key=value vocabulary. The same keys work as lines in
a `--config` file and as `--flag value` overrides, with flags winning. A run
directory's config.txt echoes the fully resolved configuration, so feeding it
back through `--config` reproduces the run bitwise (wall-clock columns aside).

Exit codes: 0 ok, 2 usage, 3 pre-flight contract, 4 numerical abort.
The env var GIWR_OUT_DIR overrides the output root (flags still win).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import datagen
from .datagen import Dataset, DatasetFormatError
from .envlab import make_env
from .objectives import ActorLossSpec, CriticLossSpec
from .proposals import ProposalConfigError, ProposalSpec
from .trainer import (
    ExperimentConfig,
    MetricsRecord,
    NumericalAbort,
    PreflightError,
    RunStats,
    aggregate,
    metrics_to_csv,
    preflight,
    summary_to_csv,
    train_seed,
)
from .nets import save_checkpoint

ENV_NAMES = ("pointmass1d", "pointmass2d", "chain")
GRADE_NAMES = ("expert", "medium", "random", "replay", "mixed")
DEFAULT_OUT_ROOT = "runs"
MANIFEST_SCHEMA = "giwr-manifest-v1"
SWEEP_P_VALUES = tuple(i / 10 for i in range(11))


class UsageError(Exception):
    """Malformed invocation: unknown key, bad literal, conflicting flags."""


# -- config vocabulary -------------------------------------------------------

def _parse_str(text: str) -> str:
    return text


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"expected a number, got {text!r}") from None
    if math.isnan(value):
        raise UsageError("nan is not a valid config value")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected true/false, got {text!r}")


def _parse_opt_float(text: str) -> float | None:
    if text.strip().lower() == "none":
        return None
    return _parse_float(text)


def _split_list(text: str) -> list[str]:
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(p == "" for p in parts):
        raise UsageError(f"expected a comma-separated list, got {text!r}")
    return parts


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(_parse_int(p) for p in _split_list(text))


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(p) for p in _split_list(text))


def _parse_names(text: str) -> tuple[str, ...]:
    return tuple(_split_list(text))


# Key order doubles as the emission order of config.txt.
_KEY_PARSERS: dict[str, Callable[[str], object]] = {
    "env": _parse_str,
    "algorithm": _parse_str,
    "dataset": _parse_str,
    "iterations": _parse_int,
    "wall_clock_cap": _parse_opt_float,
    "eval_every": _parse_int,
    "eval_episodes": _parse_int,
    "seeds": _parse_ints,
    "batch_size": _parse_int,
    "hidden": _parse_int,
    "master_seed": _parse_int,
    "critic_proposal": _parse_str,
    "al_alpha": _parse_opt_float,
    "cql_alpha": _parse_opt_float,
    "cql_uniform_count": _parse_int,
    "optimality": _parse_bool,
    "actor_proposals": _parse_names,
    "kappa": _parse_float,
    "kappas": _parse_floats,
    "lambda_kl": _parse_float,
    "weight_cap": _parse_float,
    "n_base": _parse_int,
    "m": _parse_int,
    "delta": _parse_float,
    "tau_rnd": _parse_float,
    "spi_invert_gate": _parse_bool,
}

_KEY_ALIASES = {"alpha": "al_alpha", "seed_set": "seeds"}

# Keys whose values are themselves comma-lists; a sweep over one of these
# separates family members with '+' inside each sweep value.
_LIST_KEYS = ("seeds", "actor_proposals", "kappas")

_CRITIC_KEYS = ("critic_proposal", "al_alpha", "cql_alpha",
                "cql_uniform_count", "optimality")
_ACTOR_KEYS = ("actor_proposals", "kappa", "kappas", "lambda_kl",
               "weight_cap", "n_base")
_PROPOSAL_KEYS = ("m", "delta", "tau_rnd", "spi_invert_gate")


def _canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = _KEY_ALIASES.get(key, key)
    if key not in _KEY_PARSERS:
        raise UsageError(f"unknown config key {key!r}")
    return key


def read_config_file(path) -> dict[str, str]:
    """Plain key=value lines; blank lines and # comments are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    keys: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        keys[_canonical_key(key)] = value.strip()
    return keys


def parse_values(raw: dict[str, str]) -> dict[str, object]:
    values: dict[str, object] = {}
    for key, text in raw.items():
        try:
            values[key] = _KEY_PARSERS[key](text)
        except UsageError as exc:
            raise UsageError(f"{key}: {exc}") from None
    return values


def build_config(values: dict[str, object]) -> ExperimentConfig:
    """Assemble an ExperimentConfig from flat key values.

    Critic and actor specs are built only when a related key appears, so the
    algorithm defaults (giwr's forced theta bootstrap, rtg's conservative
    coefficient) still apply to untouched runs. `kappa` is the convenience
    form for families: 1.0 on beta_sarsa members, kappa on everything else,
    mirroring the paperless convention that the dataset term is unscaled.
    """
    for required in ("env", "algorithm"):
        if required not in values:
            raise UsageError(f"missing required config key {required!r}")

    prop_kwargs = {k: values[k] for k in _PROPOSAL_KEYS if k in values}
    touched_props = bool(prop_kwargs)

    critic = None
    if any(k in values for k in _CRITIC_KEYS) or touched_props:
        critic = CriticLossSpec(
            proposal=ProposalSpec(values.get("critic_proposal", "theta"),
                                  **prop_kwargs),
            al_alpha=values.get("al_alpha"),
            cql_alpha=values.get("cql_alpha"),
            cql_uniform_count=values.get("cql_uniform_count", 10),
            optimality=values.get("optimality", False))

    actor = None
    if any(k in values for k in _ACTOR_KEYS) or touched_props:
        kinds = values.get("actor_proposals", ("beta_sarsa",))
        if "kappa" in values and "kappas" in values:
            raise UsageError("set either kappa or kappas, not both")
        if "kappas" in values:
            kappas = values["kappas"]
        elif "kappa" in values:
            kappa = values["kappa"]
            kappas = tuple(1.0 if kind == "beta_sarsa" else kappa
                           for kind in kinds)
        else:
            kappas = tuple(1.0 for _ in kinds)
        actor = ActorLossSpec(
            proposals=tuple(ProposalSpec(kind, **prop_kwargs) for kind in kinds),
            kappas=kappas,
            lambda_kl=values.get("lambda_kl", 1.0),
            weight_cap=values.get("weight_cap", 20.0),
            n_base=values.get("n_base", 8))

    kwargs = {}
    for key in ("dataset", "iterations", "wall_clock_cap", "eval_every",
                "eval_episodes", "seeds", "batch_size", "hidden", "master_seed"):
        if key in values:
            kwargs[key] = values[key]
    return ExperimentConfig(env=values["env"], algorithm=values["algorithm"],
                            critic=critic, actor=actor, **kwargs)


def config_to_keys(config: ExperimentConfig) -> dict[str, str]:
    """Echo the resolved configuration back to the flat key vocabulary.

    Proposal hyperparameters are read off the first actor proposal (the CLI
    always builds homogeneous families), falling back to the critic's.
    """
    keys = {
        "env": config.env,
        "algorithm": config.algorithm,
        "dataset": config.dataset,
        "iterations": str(config.iterations),
        "wall_clock_cap": ("none" if config.wall_clock_cap is None
                           else repr(float(config.wall_clock_cap))),
        "eval_every": str(config.eval_every),
        "eval_episodes": str(config.eval_episodes),
        "seeds": ",".join(str(s) for s in config.seeds),
        "batch_size": str(config.batch_size),
        "hidden": str(config.hidden),
        "master_seed": str(config.master_seed),
    }
    if config.critic is not None:
        spec = config.critic
        keys["critic_proposal"] = spec.proposal.kind
        keys["al_alpha"] = ("none" if spec.al_alpha is None
                            else repr(float(spec.al_alpha)))
        keys["cql_alpha"] = ("none" if spec.cql_alpha is None
                             else repr(float(spec.cql_alpha)))
        keys["cql_uniform_count"] = str(spec.cql_uniform_count)
        keys["optimality"] = "true" if spec.optimality else "false"
    if config.actor is not None:
        fam = config.actor
        keys["actor_proposals"] = ",".join(p.kind for p in fam.proposals)
        keys["kappas"] = ",".join(repr(float(k)) for k in fam.kappas)
        keys["lambda_kl"] = repr(float(fam.lambda_kl))
        keys["weight_cap"] = repr(float(fam.weight_cap))
        keys["n_base"] = str(fam.n_base)
    prop = None
    if config.actor is not None:
        prop = config.actor.proposals[0]
    elif config.critic is not None:
        prop = config.critic.proposal
    if prop is not None:
        keys["m"] = str(prop.m)
        keys["delta"] = repr(float(prop.delta))
        keys["tau_rnd"] = repr(float(prop.tau_rnd))
        keys["spi_invert_gate"] = "true" if prop.spi_invert_gate else "false"
    return keys


def config_text(config: ExperimentConfig) -> str:
    keys = config_to_keys(config)
    lines = [f"{key}={keys[key]}" for key in _KEY_PARSERS if key in keys]
    return "\n".join(lines) + "\n"


# -- output layout -----------------------------------------------------------

def grade_token(label: str) -> str:
    """Directory-safe grade token; 'mixed(0.3)' becomes 'mixed-p0.3'."""
    if not label:
        return "ungraded"
    if label.startswith("mixed(") and label.endswith(")"):
        return "mixed-p" + label[6:-1]
    return (label.replace("(", "-").replace(")", "")
                 .replace(",", "-").replace(" ", ""))


def run_dirname(env: str, grade_label: str, method: str) -> str:
    return f"{env}__{grade_token(grade_label)}__{method}"


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    from_env = os.environ.get("GIWR_OUT_DIR")
    return Path(from_env) if from_env else Path(DEFAULT_OUT_ROOT)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


# -- seed execution ----------------------------------------------------------

def _plain_arrays(tensors: dict) -> dict[str, np.ndarray]:
    return {name: np.array(getattr(t, "data", t), dtype=np.float64, copy=True)
            for name, t in tensors.items()}


def _seed_worker(config: ExperimentConfig, dataset: Dataset, seed: int) -> tuple:
    """Picklable payloads only: checkpoints cross process boundaries as
    plain arrays, and aborts travel as tuples rather than exceptions."""
    try:
        records, checkpoint, stats = train_seed(config, dataset, seed)
    except NumericalAbort as exc:
        return ("abort", seed, str(exc), _plain_arrays(exc.snapshot))
    return ("ok", seed, records, _plain_arrays(checkpoint), stats)


def _run_seeds(config: ExperimentConfig, dataset: Dataset, jobs: int) -> list[tuple]:
    """One result tuple per seed, in seed order regardless of completion."""
    seeds = config.seeds
    if jobs <= 1 or len(seeds) == 1:
        return [_seed_worker(config, dataset, seed) for seed in seeds]
    with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
        futures = [pool.submit(_seed_worker, config, dataset, seed)
                   for seed in seeds]
        return [f.result() for f in futures]


def _execute_run(config: ExperimentConfig, dataset: Dataset, dataset_path: str,
                 run_dir: Path, jobs: int) -> int:
    run_dir.mkdir(parents=True, exist_ok=True)
    started = _utcnow()
    text = config_text(config)
    (run_dir / "config.txt").write_text(text)

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config": config_to_keys(config),
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "dataset_path": str(dataset_path),
        "dataset_sha256": _sha256_file(dataset_path),
        "started": started,
    }

    outcomes = _run_seeds(config, dataset, jobs)
    for outcome in outcomes:
        if outcome[0] != "abort":
            continue
        _, seed, message, snapshot = outcome
        snap_path = run_dir / f"abort_seed{seed}.giwrnet"
        save_checkpoint(snap_path, snapshot)
        manifest.update(finished=_utcnow(), status="aborted", error=message,
                        layout={"abort_snapshot": snap_path.name})
        _write_manifest(run_dir, manifest)
        print(f"giwr: numerical abort: {message} (snapshot: {snap_path})",
              file=sys.stderr)
        return 4

    records: list[MetricsRecord] = []
    metrics_files, checkpoint_files = [], []
    for _, seed, seed_records, checkpoint, stats in outcomes:
        records.extend(seed_records)
        metrics_name = f"metrics_seed{seed}.csv"
        (run_dir / metrics_name).write_text(metrics_to_csv(seed_records))
        checkpoint_name = f"checkpoint_seed{seed}.giwrnet"
        save_checkpoint(run_dir / checkpoint_name, checkpoint)
        metrics_files.append(metrics_name)
        checkpoint_files.append(checkpoint_name)

    (run_dir / "summary.csv").write_text(summary_to_csv(aggregate(records)))
    manifest.update(finished=_utcnow(), status="ok",
                    layout={"config": "config.txt", "metrics": metrics_files,
                            "summary": "summary.csv",
                            "checkpoints": checkpoint_files})
    _write_manifest(run_dir, manifest)
    print(run_dir)
    return 0


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    payload = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (run_dir / "manifest.json").write_text(payload)


def _load_dataset(path: str) -> Dataset:
    if not path:
        raise UsageError("a dataset is required: set dataset= in the config "
                         "file or pass --dataset")
    if not Path(path).is_file():
        raise PreflightError(f"dataset file not found: {path}")
    return datagen.load(path)


def _checked_preflight(config: ExperimentConfig, dataset: Dataset) -> None:
    try:
        preflight(config, dataset)
    except ValueError as exc:
        # make_env's unknown-kind complaint is a pre-flight failure too.
        if isinstance(exc, PreflightError):
            raise
        raise PreflightError(str(exc)) from None


# -- subcommands -------------------------------------------------------------

def _resolve_config(args) -> dict[str, object]:
    raw = read_config_file(args.config) if args.config else {}
    for key in _KEY_PARSERS:
        override = getattr(args, key, None)
        if override is not None:
            raw[key] = override
    return parse_values(raw)


def cmd_train(args) -> int:
    config = build_config(_resolve_config(args))
    dataset = _load_dataset(config.dataset)
    _checked_preflight(config, dataset)
    run_dir = _out_root(args) / run_dirname(config.env, dataset.grade_label,
                                            config.algorithm)
    return _execute_run(config, dataset, config.dataset, run_dir, args.jobs)


def _parse_sweep_flag(sweeps: list[str]) -> tuple[str, list[str]]:
    if len(sweeps) > 1:
        raise UsageError(f"sweep exactly one key at a time; got {len(sweeps)}")
    spec = sweeps[0]
    if "=" not in spec:
        raise UsageError(f"--sweep expects KEY=V1,V2,..., got {spec!r}")
    key, _, rest = spec.partition("=")
    key = _canonical_key(key)
    points = _split_list(rest)
    if key in _LIST_KEYS:
        # '+' joins family members inside one sweep point.
        points = [p.replace("+", ",") for p in points]
    return key, points


def cmd_sweep(args) -> int:
    key, points = _parse_sweep_flag(args.sweep)
    base = _resolve_config(args)
    out_root = _out_root(args)
    datasets: dict[str, Dataset] = {}

    for point in points:
        values = dict(base)
        values[key] = _KEY_PARSERS[key](point)
        config = build_config(values)
        if config.dataset not in datasets:
            datasets[config.dataset] = _load_dataset(config.dataset)
        dataset = datasets[config.dataset]
        _checked_preflight(config, dataset)
        if key == "dataset":
            method = config.algorithm  # the grade token already varies
        else:
            token = point.replace("/", "-").replace(",", "+")
            method = f"{config.algorithm}-{key}{token}"
        run_dir = out_root / run_dirname(config.env, dataset.grade_label, method)
        code = _execute_run(config, dataset, config.dataset, run_dir, args.jobs)
        if code != 0:
            return code
    return 0


def _gen_one(env, grade: str, n: int, sarsa: bool, seed: int,
             p: float | None) -> Dataset:
    if grade == "expert":
        return datagen.generate(env, "expert", n, sarsa, seed)
    if grade == "medium":
        return datagen.generate(env, ("epsilon-mix", 0.5), n, sarsa, seed)
    if grade == "random":
        return datagen.generate(env, "random", n, sarsa, seed)
    if grade == "replay":
        return datagen.generate(env, "replay", n, sarsa, seed)
    expert = datagen.generate(env, "expert", n, sarsa, seed)
    random = datagen.generate(env, "random", n, sarsa, seed + 1)
    return datagen.mix(expert, random, p, seed)


def cmd_gen_data(args) -> int:
    if args.n <= 0:
        raise UsageError(f"--n must be positive, got {args.n}")
    if args.sweep_p:
        if args.grade not in (None, "mixed"):
            raise UsageError("--sweep-p generates the mixed grades; "
                             "drop --grade or set it to mixed")
        if args.p is not None:
            raise UsageError("--sweep-p and --p are mutually exclusive")
    else:
        if args.grade is None:
            raise UsageError(
                f"--grade is required (one of {', '.join(GRADE_NAMES)})")
        if args.grade == "mixed":
            if args.p is None:
                raise UsageError("--grade mixed requires --p")
            if not 0.0 <= args.p <= 1.0:
                raise UsageError(f"--p must lie in [0, 1], got {args.p}")
        elif args.p is not None:
            raise UsageError("--p only applies to --grade mixed")

    env = make_env(args.env)
    out = Path(args.out) if args.out else _out_root(args) / "datasets"
    single_file = out.suffix == ".giwrdata" and not args.sweep_p

    if args.sweep_p:
        expert = datagen.generate(env, "expert", args.n, args.sarsa, args.seed)
        random = datagen.generate(env, "random", args.n, args.sarsa, args.seed + 1)
        grades = [datagen.mix(expert, random, p, args.seed)
                  for p in SWEEP_P_VALUES]
    else:
        grades = [_gen_one(env, args.grade, args.n, args.sarsa, args.seed, args.p)]

    if single_file:
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)
    for dataset in grades:
        token = grade_token(dataset.grade_label)
        path = out if single_file else out / f"{args.env}__{token}__s{args.seed}.giwrdata"
        datagen.save(dataset, path)
        print(path)
    return 0


# -- parser ------------------------------------------------------------------

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="key=value config file; flags below override it")
    group = parser.add_argument_group("config overrides")
    for key in _KEY_PARSERS:
        if key == "seeds":
            group.add_argument("--seed-set", "--seeds", dest="seeds",
                               default=None, metavar="S0,S1,...")
            continue
        group.add_argument(f"--{key.replace('_', '-')}", dest=key,
                           default=None, metavar="V")
    group.add_argument("--alpha", dest="al_alpha", default=None, metavar="V",
                       help="alias for --al-alpha")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="giwr", allow_abbrev=False,
        description="Offline RL lab: dataset generation, training, sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write dataset files",
                         allow_abbrev=False)
    gen.add_argument("--env", required=True, choices=ENV_NAMES)
    gen.add_argument("--grade", choices=GRADE_NAMES, default=None)
    gen.add_argument("--n", type=int, default=20000)
    gen.add_argument("--sarsa", action="store_true",
                     help="record successor actions")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--p", type=float, default=None,
                     help="expert portion for --grade mixed")
    gen.add_argument("--sweep-p", dest="sweep_p", action="store_true",
                     help="emit all mixtures p in {0.0, 0.1, ..., 1.0}")
    gen.add_argument("--out", default=None,
                     help="output file (.giwrdata) or directory")
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="run one experiment",
                            allow_abbrev=False)
    _add_config_flags(train)
    train.add_argument("--out", default=None, help="output root directory")
    train.add_argument("--jobs", type=int, default=1,
                       help="parallel seed jobs")
    train.set_defaults(func=cmd_train)

    sweep = sub.add_parser("sweep", help="train across one key's values",
                            allow_abbrev=False)
    _add_config_flags(sweep)
    sweep.add_argument("--sweep", action="append", required=True,
                       metavar="KEY=V1,V2,...")
    sweep.add_argument("--out", default=None, help="output root directory")
    sweep.add_argument("--jobs", type=int, default=1,
                       help="parallel seed jobs")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"giwr: error: {exc}", file=sys.stderr)
        return 2
    except (PreflightError, ProposalConfigError, DatasetFormatError) as exc:
        print(f"giwr: pre-flight: {exc}", file=sys.stderr)
        return 3
    except NumericalAbort as exc:
        print(f"giwr: numerical abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
