"""Command-line harness: run scenarios, train, fit, and emit reproducible
CSV curve and summary data.

Commands: ``simulate``, ``train-reinforce``, ``fit-em``, ``ecosystem-sweep``.
Configuration comes from an INI-style file (``--config``, sections
``[run]``, ``[scenario]``, ``[train]``, ``[em]``, ``[sweep]``) overridden
by repeatable ``--set key=value`` flags; ``--dump-config`` prints the
fully resolved configuration and exits.  Unknown keys are rejected at
parse time.  Exit codes: 0 success, 1 runtime failure, 2 configuration
error.

Multi-run commands parallelize across runs (``ECOSIM_THREADS`` caps the
worker count); per-row stream keying makes every split bit-identical to
a serial run, and a single collector writes all output files.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .inference import (Adam, EmIteration, HmcConfig, ReinforceConfig,
                        make_optimizer, mc_em_fit, reinforce_training,
                        write_iteration_csv)
from .logprob import ObservedTrajectory
from .rng import derive_seed
from .runtime import execute, export_trajectory, trajectory
from .scenarios import (CountConfig, EcosystemConfig, LatentSatConfig,
                        PorlConfig, build_count_story, build_ecosystem_story,
                        build_latent_sat_story, build_porl_story,
                        sample_true_alpha)
from .scenarios.latent_sat import HELD_OUT
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    runs: int = 1
    out: str = "out"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")


@dataclass(frozen=True)
class TrainSettings:
    iterations: int = 50
    learning_rate: float = 0.02
    optimizer: str = "adam"
    # The batch-mean baseline is the variance-reduction heuristic that makes
    # desk-scale policy-gradient runs learn reliably; reinforce_step itself
    # defaults to no baseline.
    baseline: bool = True
    history_lengths: str = ""  # comma-separated sweep; empty = scenario default

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass(frozen=True)
class EmSettings:
    iterations: int = 30
    learning_rate: float = 0.05
    m_steps: int = 1
    hmc_step_size: float = 0.02
    hmc_num_leapfrog: int = 10
    hmc_num_samples: int = 10
    hmc_burn_in: int = 5

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")


@dataclass(frozen=True)
class SweepSettings:
    boost_caps: str = "0,0.6,1.2,2.4,4.8"

    def caps(self) -> list[float]:
        try:
            return [float(x) for x in self.boost_caps.split(",") if x.strip() != ""]
        except ValueError:
            raise ConfigError(f"bad boost_caps list: {self.boost_caps!r}") from None


_SCENARIO_CONFIGS = {
    "count": CountConfig,
    "porl": PorlConfig,
    "latent-sat": LatentSatConfig,
    "ecosystem": EcosystemConfig,
}


def _convert(raw: str, annotation) -> object:
    text = str(annotation)
    raw = raw.strip()
    if "tuple" in text:
        return tuple(float(x) for x in raw.split(","))
    if "bool" in text:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean {raw!r}")
    if "None" in text and raw.lower() in ("none", ""):
        return None
    if "int" in text:
        return int(raw)
    if "float" in text:
        return float(raw)
    return raw


def _stage(staged: dict[str, dict[str, object]], defaults: dict[str, object],
           section: str, key: str, raw: str):
    """Validate and convert one override; applied later in a single pass so
    cross-field invariants are only checked on the final configuration."""
    if section not in defaults:
        raise ConfigError(f"unknown config section {section!r}")
    fields = {f.name: f for f in dataclasses.fields(defaults[section])}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    try:
        staged[section][key] = _convert(raw, fields[key].type)
    except (ValueError, TypeError):
        raise ConfigError(f"bad value {raw!r} for {section}.{key}") from None


def _stage_bare(staged, defaults, key: str, raw: str, search: tuple[str, ...]):
    hits = [s for s in search
            if s in defaults
            and key in {f.name for f in dataclasses.fields(defaults[s])}]
    if not hits:
        raise ConfigError(f"unknown config key {key!r} (searched sections {list(search)})")
    if len(hits) > 1:
        raise ConfigError(f"ambiguous key {key!r}; qualify as one of "
                          f"{[h + '.' + key for h in hits]}")
    _stage(staged, defaults, hits[0], key, raw)


def _resolve(args, command_section: str | None) -> dict[str, object]:
    scenario_cls = _SCENARIO_CONFIGS.get(args.scenario)
    if scenario_cls is None:
        raise ConfigError(f"unknown scenario {args.scenario!r}; "
                          f"known: {sorted(_SCENARIO_CONFIGS)}")
    defaults: dict[str, object] = {
        "run": RunSettings(),
        "scenario": scenario_cls(),
        "train": TrainSettings(),
        "em": EmSettings(),
        "sweep": SweepSettings(),
    }
    staged: dict[str, dict[str, object]] = {name: {} for name in defaults}
    if args.config:
        parser = configparser.ConfigParser()
        read = parser.read(args.config)
        if not read:
            raise ConfigError(f"config file not found: {args.config}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _stage(staged, defaults, section, key, raw)
    search = ("scenario",) + ((command_section,) if command_section else ()) + ("run",)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            _stage(staged, defaults, section, key, raw)
        else:
            _stage_bare(staged, defaults, key, raw, search)
    if args.seed is not None:
        _stage(staged, defaults, "run", "seed", str(args.seed))
    if args.runs is not None:
        _stage(staged, defaults, "run", "runs", str(args.runs))
    if args.out is not None:
        staged["run"]["out"] = args.out
    if args.horizon is not None:
        _stage(staged, defaults, "scenario", "horizon", str(args.horizon))
    sections: dict[str, object] = {}
    for name, cfg in defaults.items():
        try:
            sections[name] = dataclasses.replace(cfg, **staged[name])
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return sections


def _dump(sections: dict[str, object], scenario: str) -> None:
    print(f"scenario={scenario}")
    for name in ("run", "scenario", "train", "em", "sweep"):
        cfg = sections[name]
        for f in dataclasses.fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(x) for x in value)
            print(f"{name}.{f.name}={value}")


def _workers(tasks: int) -> int:
    cap = os.environ.get("ECOSIM_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(tasks, limit))


def _write_csv(path: Path, schema: str, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# simulate


def _build_scenario(name: str, cfg, seed: int):
    if name == "count":
        return build_count_story(cfg), {"final_count": "count.n"}
    if name == "porl":
        net, _, metrics = build_porl_story(cfg)
        return net, {"mean_cumulative_reward": metrics["reward"]}
    if name == "latent-sat":
        alpha = sample_true_alpha(cfg, derive_seed(seed, "alpha"))
        net, _, _ = build_latent_sat_story(cfg, true_alpha=alpha)
        return net, {"mean_final_satisfaction": "satisfaction.value"}
    if name == "ecosystem":
        net, metrics = build_ecosystem_story(cfg, policy="boosted")
        return net, {"welfare": metrics["welfare"]}
    raise ConfigError(f"unknown scenario {name!r}")


def cmd_simulate(args) -> int:
    sections = _resolve(args, None)
    if args.dump_config:
        _dump(sections, args.scenario)
        return 0
    run = sections["run"]
    cfg = sections["scenario"]
    net, metrics = _build_scenario(args.scenario, cfg, run.seed)
    traj = trajectory(net, cfg.horizon, run.seed)
    outdir = Path(run.out)
    export_trajectory(traj, outdir)
    rows = []
    for metric, fieldpath in metrics.items():
        var, path = fieldpath.split(".", 1)
        payload = traj.last_slice()[var].get(path)
        arr = payload.data if isinstance(payload, Tensor) else np.asarray(payload)
        if args.scenario == "ecosystem":
            for r in range(arr.shape[0]):
                rows.append([r, metric, _fmt(arr[r])])
        else:
            rows.append([0, metric, _fmt(arr.mean())])
    _write_csv(outdir / "summary.csv", "summary/1", ["run", "metric", "value"], rows)
    return 0


# ---------------------------------------------------------------------------
# train-reinforce


def _train_one(task):
    cfg, history, seed, train = task
    scen = dataclasses.replace(cfg, history_length=history,
                               param_seed=derive_seed(seed, "params"))
    net, registry, metrics = build_porl_story(scen)
    rc = ReinforceConfig(num_trajectories=scen.population, horizon=scen.horizon,
                         reward_field=metrics["reward"],
                         policy_field=metrics["policy_log_prob"],
                         baseline=train.baseline)
    opt = make_optimizer(train.optimizer, train.learning_rate)
    rewards = reinforce_training(net, registry, rc, opt, train.iterations, seed)
    return history, seed, rewards


def cmd_train_reinforce(args) -> int:
    sections = _resolve(args, "train")
    if args.dump_config:
        _dump(sections, args.scenario)
        return 0
    if args.scenario != "porl":
        raise ConfigError("train-reinforce supports only the porl scenario")
    run, cfg, train = sections["run"], sections["scenario"], sections["train"]
    if train.history_lengths.strip():
        histories = [int(x) for x in train.history_lengths.split(",")]
    else:
        histories = [cfg.history_length]
    seeds = [derive_seed(run.seed, "train-seed", i) for i in range(run.runs)]
    tasks = [(cfg, h, s, train) for h in histories for s in seeds]
    workers = _workers(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    curves = {(h, s): r for h, s, r in results}
    header = ["iteration"]
    for h in histories:
        header += [f"h{h}_s{i}" for i in range(len(seeds))] + [f"h{h}_avg"]
    rows = []
    for it in range(train.iterations):
        row = [str(it)]
        for h in histories:
            vals = [curves[(h, s)][it] for s in seeds]
            row += [_fmt(v) for v in vals] + [_fmt(np.mean(vals))]
        rows.append(row)
    outdir = Path(run.out)
    _write_csv(outdir / "reinforce_curve.csv", "reinforce_curve/1", header, rows)
    summary = []
    for h in histories:
        first = np.mean([curves[(h, s)][0] for s in seeds])
        last = np.mean([curves[(h, s)][-1] for s in seeds])
        summary.append([f"h{h}", _fmt(first), _fmt(last)])
    _write_csv(outdir / "reinforce_summary.csv", "reinforce_summary/1",
               ["history", "initial_reward", "final_reward"], summary)
    return 0


# ---------------------------------------------------------------------------
# fit-em


def cmd_fit_em(args) -> int:
    sections = _resolve(args, "em")
    if args.dump_config:
        _dump(sections, args.scenario)
        return 0
    if args.scenario != "latent-sat":
        raise ConfigError("fit-em supports only the latent-sat scenario")
    run, cfg, em = sections["run"], sections["scenario"], sections["em"]
    true_alpha = sample_true_alpha(cfg, derive_seed(run.seed, "alpha"))
    truth_net, _, _ = build_latent_sat_story(cfg, true_alpha=true_alpha)
    data = ObservedTrajectory.from_trajectory(
        truth_net, trajectory(truth_net, cfg.horizon, run.seed), hold_out=[HELD_OUT])
    net, registry, held = build_latent_sat_story(cfg)
    hmc = HmcConfig(step_size=em.hmc_step_size, num_leapfrog=em.hmc_num_leapfrog,
                    num_samples=em.hmc_num_samples, burn_in=em.hmc_burn_in)
    opt = Adam(em.learning_rate)
    if em.iterations == 0:
        # boundary: report the initial objective only, no updates
        from .logprob import log_probability_from_value_trajectory
        z0 = [np.zeros((cfg.population, cfg.interest_dim))] * cfg.horizon
        lp = log_probability_from_value_trajectory(
            net, data.inject(*held, z0), cfg.horizon - 1)
        trace = [EmIteration(0, float(lp.data), None, 0.0)]
    else:
        trace = mc_em_fit(net, data, held, hmc, opt, em.iterations, run.seed,
                          registry=registry, m_steps=em.m_steps)
    outdir = Path(run.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with (outdir / "em_trace.csv").open("w", encoding="utf-8", newline="") as fh:
        write_iteration_csv(fh, trace)
    estimated = registry.as_arrays()["alpha"]
    _write_csv(outdir / "alpha_recovery.csv", "alpha_recovery/1",
               ["user", "true_alpha", "estimated_alpha"],
               [[u, _fmt(true_alpha[u]), _fmt(estimated[u])]
                for u in range(cfg.population)])
    r = float(np.corrcoef(true_alpha, estimated)[0, 1]) if cfg.population > 1 else math.nan
    _write_csv(outdir / "summary.csv", "summary/1", ["run", "metric", "value"],
               [[0, "alpha_pearson_r", _fmt(r)],
                [0, "final_objective", _fmt(trace[-1].objective)]])
    return 0


# ---------------------------------------------------------------------------
# ecosystem-sweep


def _sweep_one(task):
    cfg, boost_cap, row_offset, num_rows, seed = task
    scen = dataclasses.replace(cfg, boost_cap=boost_cap, num_runs=num_rows)
    net, metrics = build_ecosystem_story(
        scen, policy="myopic" if boost_cap == 0.0 else "boosted")
    final = execute(net, scen.horizon - 1, seed, row_offset=row_offset)
    var, path = metrics["welfare"].split(".", 1)
    return boost_cap, row_offset, final[var].get(path).data.copy()


def cmd_ecosystem_sweep(args) -> int:
    sections = _resolve(args, "sweep")
    if args.dump_config:
        _dump(sections, args.scenario)
        return 0
    if args.scenario != "ecosystem":
        raise ConfigError("ecosystem-sweep supports only the ecosystem scenario")
    run, cfg, sweep = sections["run"], sections["scenario"], sections["sweep"]
    caps = sweep.caps()
    total_runs = run.runs if run.runs > 1 else cfg.num_runs
    # Every L value sees the same sampled ecosystems (shared seed), and
    # per-row keying makes worker splits bit-identical to a serial run.
    workers = _workers(len(caps) * total_runs)
    per_cap_workers = max(1, workers // len(caps)) if len(caps) else 1
    chunk = max(1, math.ceil(total_runs / per_cap_workers))
    tasks = []
    for cap in caps:
        for lo in range(0, total_runs, chunk):
            tasks.append((cfg, cap, lo, min(chunk, total_runs - lo), run.seed))
    started = time.perf_counter()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    elapsed = time.perf_counter() - started
    welfare: dict[float, np.ndarray] = {cap: np.zeros(total_runs) for cap in caps}
    for cap, lo, values in results:
        welfare[cap][lo:lo + len(values)] = values
    outdir = Path(run.out)
    rows = [[repr(cap), r, _fmt(welfare[cap][r])]
            for cap in caps for r in range(total_runs)]
    _write_csv(outdir / "welfare.csv", "ecosystem_welfare/1",
               ["boost_cap", "run", "cumulative_utility"], rows)
    summary = []
    for cap in caps:
        w = welfare[cap]
        se = _fmt(w.std(ddof=1) / math.sqrt(total_runs)) if total_runs > 1 else ""
        summary.append([repr(cap), _fmt(w.mean()), se])
    _write_csv(outdir / "welfare_summary.csv", "ecosystem_welfare_summary/1",
               ["boost_cap", "mean", "standard_error"], summary)
    _write_csv(outdir / "summary.csv", "summary/1", ["run", "metric", "value"],
               [[0, "wall_clock_s", _fmt(elapsed)]])
    return 0


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, default_scenario: str | None = None):
    p.add_argument("--scenario", default=default_scenario,
                   required=default_scenario is None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field (repeatable)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecosim",
        description="Simulate, train, and fit multi-agent recommender ecosystems.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="sample a trajectory and export CSVs")
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)
    p = sub.add_parser("train-reinforce", help="policy-gradient training curves")
    _add_common(p, default_scenario="porl")
    p.set_defaults(fn=cmd_train_reinforce)
    p = sub.add_parser("fit-em", help="Monte-Carlo EM latent-variable fitting")
    _add_common(p, default_scenario="latent-sat")
    p.set_defaults(fn=cmd_fit_em)
    p = sub.add_parser("ecosystem-sweep", help="welfare sweep over boost caps")
    _add_common(p, default_scenario="ecosystem")
    p.set_defaults(fn=cmd_ecosystem_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"ecosim: configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"ecosim: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
