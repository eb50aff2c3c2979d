"""Command-line front end: ``msgibbs {build-measure,solve,simulate,cascade,selftest}``.

Each command reads one YAML config, calls the library, and writes
``result.json`` plus CSV tables into the output directory.  Wall time goes to
``timing.json`` so that every other artifact is byte-identical across reruns
with the same config and seed.

Exit codes: 0 success, 1 failed acceptance criterion, 2 config error,
3 numeric failure, 4 infeasible targets.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, InfeasibleTargetsError, NumericalError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


@dataclass
class ResultRecord:
    command: str
    config_hash: str
    seed: int
    outputs: dict
    tool_version: str = __version__
    wall_time: float = field(default=0.0, compare=False)
    tables: dict = field(default_factory=dict, repr=False)  # file name -> (header, rows)

    def to_json(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash, "seed": self.seed,
                "tool_version": self.tool_version, "outputs": self.outputs}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_record(record: ResultRecord, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(dumps(record.to_json()))
    for name, (header, rows) in record.tables.items():
        (out / name).write_text(_csv(header, rows))
    (out / "timing.json").write_text(dumps({"command": record.command, "wall_time_s": record.wall_time}))


# -- commands -----------------------------------------------------------------------------


def cmd_build_measure(cfg: ExperimentConfig, jobs: int = 1) -> ResultRecord:
    from .entropy import entropy_profile
    from .measure import build_measure, free_energies
    from .space import ScaleParams

    measures, rows = [], []
    for zetas in cfg.params["zetas"]:
        m = build_measure(cfg.hamiltonian, ScaleParams(zetas), cfg.reference)
        prof = entropy_profile(m)
        fe = free_energies(m, cfg.params["beta"])
        measures.append(dict(
            zetas=list(zetas), log_partition=m.log_partition, root_log_normalizer=m.root_log_normalizer,
            pressures={str(lv): m.pressures[lv] for lv in range(m.depth + 1)},
            conditionals={str(lv): m.conditionals[lv] for lv in range(1, m.depth + 1)},
            joint=m.joint, entropy_total=prof.total, entropy_per_level=list(prof.per_level),
            free_energies=dict(beta=fe.beta, betas=list(fe.betas), identity_error=fe.identity_error,
                               values={str(lv): fe.free_energies[lv] for lv in range(m.depth + 1)}),
        ))
        rows.append([" ".join(repr(z) for z in zetas), m.log_partition, m.root_log_normalizer, prof.total,
                     *prof.per_level])
        print(f"zetas={tuple(zetas)}  P0={m.log_partition:.6f}  zeta_1*P0={m.root_log_normalizer:.6f}")
        print("  level  S^l")
        for lv, s in enumerate(prof.per_level, start=1):
            print(f"  {lv:5d}  {s:.6f}")
        print(f"  total  {prof.total:.6f}")
    header = ["zetas", "P0", "root_log_normalizer", "entropy_total"] + [f"S{lv}" for lv in range(1, cfg.space.depth + 1)]
    return ResultRecord("build-measure", cfg.config_hash, cfg.seed, {"measures": measures},
                        tables={"entropy.csv": (header, rows)})


def cmd_solve(cfg: ExperimentConfig, jobs: int = 1) -> ResultRecord:
    from .entropy import Multipliers, entropy_profile, phi
    from .measure import build_measure
    from .rng import stream
    from .space import Observable
    from .variational import (
        linear_response_check, solve_constrained_two_scale, solve_variational, temperature_ratios,
        zetas_from_multipliers,
    )

    H, p = cfg.hamiltonian, cfg.params
    out: dict = {"variational": [], "constrained": [], "round_trip": []}
    rng = stream(cfg.seed, 1)
    for mu, gammas in p["multipliers"]:
        mult = Multipliers(mu, gammas)
        m = solve_variational(H, mult)
        row = dict(mu=mu, gammas=list(gammas), zetas=list(zetas_from_multipliers(mult).zetas),
                   phi_star=phi(m, H, mult), log_partition=m.log_partition,
                   root_log_normalizer=m.root_log_normalizer, joint=m.joint)
        if cfg.space.depth == 2:
            t = temperature_ratios(mult)
            row["temperatures"] = dict(beta1=t.beta1, beta2=t.beta2, ratio=t.ratio, frozen_level2=t.frozen_level2)
            lr = p.get("linear_response")
            if lr:
                checks = []
                for _ in range(lr["count"]):
                    O = Observable(cfg.space, rng.uniform(-1, 1, size=cfg.space.shape))
                    for level in (1, 2):
                        A = Observable.of_level(cfg.space, level, rng.uniform(-1, 1, size=cfg.space.size(level)))
                        r = linear_response_check(m, O, A, h=lr["step"])
                        checks.append(dict(level=level, abs_err=r.abs_err, lhs=r.lhs, rhs=r.rhs))
                row["linear_response"] = checks
        out["variational"].append(row)
        print(f"mu={mu} gammas={tuple(gammas)}  phi*={row['phi_star']:.10f}"
              + (f"  beta1/beta2={row['temperatures']['ratio']:.6g}" if "temperatures" in row else ""))
    for E, S2 in p["targets"]:
        sol = solve_constrained_two_scale(H, E, S2)
        out["constrained"].append(sol.to_record())
        print(f"E={E} S2={S2}  mu={sol.multipliers.mu:.10f} gamma={sol.multipliers.gammas[0]:.10f}")
    rows = []
    for mu, gamma in p["round_trip"]:
        mult = Multipliers(mu, (gamma,))
        m = build_measure(H, zetas_from_multipliers(mult))
        E = float(np.sum(m.joint * H.values))
        S2 = entropy_profile(m).level(2)
        sol = solve_constrained_two_scale(H, E, S2)
        err = max(abs(sol.multipliers.mu - mu), abs(sol.multipliers.gammas[0] - gamma))
        out["round_trip"].append(dict(mu=mu, gamma=gamma, E=E, S2=S2, recovered=sol.to_record(), max_error=err))
        rows.append([mu, gamma, E, S2, sol.multipliers.mu, sol.multipliers.gammas[0], err])
        print(f"round trip mu={mu} gamma={gamma}  max error {err:.3g}")
    tables = {"round_trip.csv": (["mu", "gamma", "E", "S2", "mu_recovered", "gamma_recovered", "max_error"], rows)} if rows else {}
    return ResultRecord("solve", cfg.config_hash, cfg.seed, out, tables=tables)


def cmd_simulate(cfg: ExperimentConfig, jobs: int = 1) -> ResultRecord:
    from .ldp import BaseMeasure, ReinforcementParams, empirical_rate_estimate, run_reinforced_multiscale
    from .rng import derive_seed

    p = cfg.params
    q = BaseMeasure.uniform(cfg.space) if p["base"] is None else BaseMeasure(cfg.space, p["base"])
    rows, ladders, runs = [], [], []
    for gammas in p["gammas"]:
        g = ReinforcementParams(gammas)
        est = empirical_rate_estimate(p["target"], q, g, p["n"])
        ladders.append(dict(gammas=list(gammas), rate=est[0].rate, null_box=est[0].null_box,
                            rows=[dict(n=r.n, log_probability=r.log_probability, estimate=r.estimate, gap=r.gap)
                                  for r in est]))
        for r in est:
            rows.append([" ".join(repr(x) for x in gammas), r.n, r.log_probability, r.estimate, r.rate, r.gap])
            print(f"gammas={gammas} n={r.n:>7d}  -(1/n)log P={r.estimate:.8f}  rate={r.rate:.8f}  gap={r.gap:.3e}")
        if p.get("runs"):
            for i in range(p["runs"]["count"]):
                o = run_reinforced_multiscale(p["runs"]["n"], g, q, derive_seed(cfg.seed, 2, i))
                runs.append(dict(gammas=list(gammas), run=i, seed=o.seed,
                                 node_counts={str(lv): o.node_counts[lv] for lv in range(len(o.node_counts))},
                                 reinforced={str(lv): o.reinforced[lv] for lv in range(1, len(o.reinforced))}))
    header = ["gammas", "n", "log_probability", "estimate", "rate", "rate_gap"]
    return ResultRecord("simulate", cfg.config_hash, cfg.seed, {"ladders": ladders, "runs": runs},
                        tables={"rate_ladder.csv": (header, rows)})


def cmd_cascade(cfg: ExperimentConfig, jobs: int = 1) -> ResultRecord:
    from .crp import crp_multinomial_experiment, grand_potential_mc, random_two_scale_average
    from .rng import derive_seed
    from .space import Observable

    H, p = cfg.hamiltonian, cfg.params
    crp_seed = derive_seed(cfg.seed, 3)
    observables = {"hamiltonian": Observable(H.space, H.values),
                   "level1_indicator": Observable.of_level(H.space, 1, np.eye(H.space.size(1))[0])}
    rows, avg_rows, doubling = [], [], []
    for zeta in p["zetas"]:
        ests = []
        for n in p["crp_n"]:
            e = grand_potential_mc(H, zeta, n, p["replicates"], crp_seed, p["prior1"], p["prior2"], jobs=jobs)
            ests.append(e)
            rows.append([zeta, n, e.mean, e.std_error, e.target, e.z_score])
            print(f"zeta={zeta} crp_n={n}  estimate={e.mean:.6f} +- {e.std_error:.2e}  P0={e.target:.6f}  z={e.z_score:+.2f}")
            for name in p["observables"]:
                a = random_two_scale_average(H, observables[name], zeta, n, p["replicates"], crp_seed,
                                             p["prior1"], p["prior2"], jobs=jobs)
                avg_rows.append([zeta, n, name, a.mean, a.std_error, a.target, a.z_score])
        for a, b in zip(ests, ests[1:]):
            shift = abs(b.mean - a.mean)
            ok = shift < a.std_error or shift <= 1e-12
            doubling.append(dict(zeta=zeta, crp_n=a.truncation_n, next_crp_n=b.truncation_n, shift=shift,
                                 std_error=a.std_error, status="PASS" if ok else "FAIL"))
    maximizer = []
    if p["maximizer_n"]:
        for i, zeta in enumerate(p["zetas"]):
            c = crp_multinomial_experiment(H, zeta, p["maximizer_n"], derive_seed(cfg.seed, 4, i),
                                           p["prior1"], p["prior2"])
            maximizer.append(dict(zeta=zeta, n=p["maximizer_n"], boxes=c.maximizer.shape[0], gap=c.gap))
    tables = {
        "cascade.csv": (["zeta", "crp_n", "estimate", "std_error", "exact_P0", "z_score"], rows),
        "averages.csv": (["zeta", "crp_n", "observable", "estimate", "std_error", "exact", "z_score"], avg_rows),
    }
    return ResultRecord("cascade", cfg.config_hash, cfg.seed,
                        {"doubling": doubling, "maximizer": maximizer}, tables=tables)


COMMAND_FUNCS = {"build-measure": cmd_build_measure, "solve": cmd_solve,
                 "simulate": cmd_simulate, "cascade": cmd_cascade}


def cmd_selftest(out: Path, seed: int, jobs: int = 1) -> int:
    from .acceptance import run_all

    t0 = time.perf_counter()
    results = run_all(seed, jobs=jobs)
    out.mkdir(parents=True, exist_ok=True)
    report = {"seed": seed, "tool_version": __version__,
              "criteria": [dict(number=r.number, title=r.title, passed=r.passed, metrics=r.metrics) for r in results]}
    (out / "acceptance.json").write_text(dumps(report))
    for r in results:
        print(r.line())
    total = time.perf_counter() - t0
    timing = {"criteria": {str(r.number): dict(runtime_s=r.runtime, limit_s=r.limit) for r in results},
              "total_s": total, "overhead_s": total - sum(r.runtime for r in results)}
    (out / "timing.json").write_text(dumps(timing))
    ok = all(r.passed and r.in_time for r in results)
    print(f"{sum(r.passed and r.in_time for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msgibbs", description="Multiscale Gibbs measures: experiments from YAML configs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*COMMAND_FUNCS, "selftest"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "selftest", help="YAML experiment config")
        sp.add_argument("--out", help="output directory (default: config 'output' or ./out)")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for replicate work")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", field="--jobs")
        if args.command == "selftest":
            from .acceptance import DEFAULT_SEED
            from .rng import check_seed

            seed = DEFAULT_SEED if args.seed is None else args.seed
            try:
                check_seed(seed)
            except ValueError as exc:
                raise ConfigError(str(exc), field="--seed") from None
            return cmd_selftest(Path(args.out or "out/selftest"), seed, args.jobs)
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out or cfg.output or "out")
        t0 = time.perf_counter()
        try:
            record = COMMAND_FUNCS[args.command](cfg, args.jobs)
        except (NumericalError, InfeasibleTargetsError):
            raise
        except ValueError as exc:
            # parameter combinations the library rejects are config problems
            raise ConfigError(str(exc)) from None
        except (FloatingPointError, OverflowError, MemoryError) as exc:
            raise NumericalError(str(exc)) from None
        record.wall_time = time.perf_counter() - t0
        write_record(record, out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleTargetsError as exc:
        print(f"infeasible targets: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
