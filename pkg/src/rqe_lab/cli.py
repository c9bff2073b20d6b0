"""``rqe`` command line: equilibrium solvers, gradient checks, training and cross-play.

Exit codes: 0 success, 1 a check failed or training diverged, 2 bad usage or config.
Configuration precedence: command-line flags, then a JSON ``--config`` file, then defaults.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .crossplay import (TrainedAgent, checkerboard_score, cross_play, free_riding_profile, tp_cp_stats,
                        write_long_csv, write_matrix_csv, write_stats_json)
from .finite import (enumerate_rqe, free_riding_bound, free_riding_threshold, merge_point, tau_scan,
                     write_tau_scan_csv)
from .games import (FiniteCollabGame, QuadraticAggregativeGame, RiskProfile, free_riding_degree, load_game,
                    make_example_coordination_game, make_example_force_game)
from .gaussian import InfiniteRisk, SingularSystem, monotonicity_scan, solve_gaussian_rqe, write_monotonicity_csv
from .markov import verify_markov_identities, write_report
from .overcooked import GridConfig
from .train import (CURVE_COLUMNS, PolicyParams, TrainerConfig, TrainingDiverged, config_hash, header_comment,
                    load_checkpoint, save_checkpoint, train_ippo, train_srpo)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_grid(spec: str) -> np.ndarray:
    """``start:stop:step`` (stop inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            start, stop, step = (float(v) for v in spec.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9))
            return np.round(start + step * np.arange(n + 1), 12)
        return np.array(sorted(float(v) for v in spec.split(",")))
    except ValueError:
        raise UsageError(f"bad grid {spec!r}; expected start:stop:step or a comma list") from None


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _merged(args, config: dict, keys) -> dict:
    out = {k: config[k] for k in keys if k in config}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _out_dir(args, cfg_hash: str) -> Path:
    root = Path(args.out) if args.out else Path(args.runs_dir) / cfg_hash
    root.mkdir(parents=True, exist_ok=True)
    return root


def _write_config(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# finite
# ---------------------------------------------------------------------------

def _finite_game(args, config) -> FiniteCollabGame:
    game_path = args.game or config.get("game")
    example = args.example or config.get("example")
    if game_path:
        game = load_game(game_path)
        if not isinstance(game, FiniteCollabGame):
            raise UsageError("game file does not describe a finite game")
        return game
    if example in (None, "coordination"):
        return make_example_coordination_game()
    raise UsageError(f"unknown finite example {example!r}")


def cmd_rqe_finite(args) -> int:
    config = _load_json(args.config)
    game = _finite_game(args, config)
    p = _merged(args, config, ("eps", "tau", "starts", "tol", "seed", "delta", "tau_grid"))
    eps, starts, tol, seed = float(p.get("eps", 0.2)), int(p.get("starts", 64)), float(p.get("tol", 1e-10)), \
        int(p.get("seed", 0))
    if eps <= 0:
        raise UsageError("--eps must be positive")

    if args.threshold:
        if "delta" not in p:
            raise UsageError("--threshold needs --delta")
        print(f"tau_bound {free_riding_threshold(game, eps, float(p['delta'])):.6g}")
        return EXIT_OK

    if "tau_grid" in p:
        grid = parse_grid(str(p["tau_grid"]))
        cfg = {"command": "finite", "game": game.to_dict(), "eps": eps, "tau_grid": grid.tolist(),
               "starts": starts, "tol": tol, "seed": seed}
        h = config_hash(cfg)
        out = _out_dir(args, h)
        rows = tau_scan(game, eps, grid, starts, seed, tol)
        write_tau_scan_csv(rows, out / "scan.csv", header_comment(h))
        _write_config(out / "config.json", cfg)
        merge = merge_point(rows)
        report = {"merge_point": merge, "counts": [len(r.equilibria) for r in rows],
                  "max_degree": [r.max_degree for r in rows]}
        _write_config(out / "report.json", report)
        print(f"wrote {out / 'scan.csv'} ({len(rows)} tau values, merge point {merge})")
        return EXIT_OK

    tau = float(p.get("tau", 0.0))
    eqs, res = enumerate_rqe(game, RiskProfile.shared(tau, eps), starts, seed, tol, return_residuals=True)
    print(f"{len(eqs)} equilibria at tau={tau:g}, eps={eps:g}")
    for k, ((a, b), r) in enumerate(zip(eqs, res)):
        print(f"  [{k}] x1={np.array2string(a.probs, precision=6)} x2={np.array2string(b.probs, precision=6)} "
              f"fr_degree={free_riding_degree(game, a, b):.6f} residual={r:.2e}")
    if tau > 0:
        print(f"free-riding bound {free_riding_bound(game, eps, tau):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gaussian
# ---------------------------------------------------------------------------

def _gaussian_game(args, config) -> QuadraticAggregativeGame:
    game_path = args.game or config.get("game")
    if game_path:
        game = load_game(game_path)
        if not isinstance(game, QuadraticAggregativeGame):
            raise UsageError("game file does not describe a quadratic aggregative game")
        return game
    example = args.example or config.get("example", "force")
    if example != "force":
        raise UsageError(f"unknown gaussian example {example!r}")
    abar = args.abar if args.abar is not None else config.get("abar", 1.0)
    return make_example_force_game(float(abar))


def cmd_rqe_gaussian(args) -> int:
    config = _load_json(args.config)
    game = _gaussian_game(args, config)
    p = _merged(args, config, ("eps", "tau", "tau_grid"))
    eps = float(p.get("eps", 1.0))
    if eps <= 0:
        raise UsageError("--eps must be positive")
    if "tau_grid" in p:
        grid = parse_grid(str(p["tau_grid"]))
        cfg = {"command": "gaussian", "game": game.to_dict(), "eps": eps, "tau_grid": grid.tolist()}
        h = config_hash(cfg)
        out = _out_dir(args, h)
        rows = monotonicity_scan(game, eps, grid)
        write_monotonicity_csv(rows, out / "scan.csv", header_comment(h))
        _write_config(out / "config.json", cfg)
        n_valid = sum(r["valid"] for r in rows)
        print(f"wrote {out / 'scan.csv'} ({n_valid}/{len(rows)} valid tau values)")
        return EXIT_OK
    tau = float(p.get("tau", 0.0))
    try:
        rep = solve_gaussian_rqe(game, RiskProfile.shared(tau, eps, game.n_players))
    except (InfiniteRisk, SingularSystem) as exc:
        print(f"no valid Gaussian RQE at tau={tau:g}: {exc}")
        return EXIT_FAIL
    for i, s in enumerate(rep.strategies):
        print(f"player {i + 1}: mean={np.array2string(s.mean, precision=8)} "
              f"cov={np.array2string(s.cov.ravel(), precision=8)}")
    print(f"J={rep.shared_reward:.10g} private_costs={np.array2string(rep.private_costs, precision=8)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    report = verify_markov_identities(args.instances, args.seed, fault=args.fault)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_report(report, args.out)
    for k, v in report["max"].items():
        print(f"max {k}: {v:.3e}")
    for row in report["instances"]:
        if not row["pass"]:
            print(f"instance {row['instance']} FAILED: " + ", ".join(
                f"{k}={row[k]:.3e}" for k in ("grad_pi_rel_err", "grad_p_rel_err",
                                                "pdl_pi_residual", "pdl_p_residual")))
    print("PASS" if report["pass"] else "FAIL")
    return EXIT_OK if report["pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_KEYS = tuple(TrainerConfig.__dataclass_fields__)


def _trainer_config(args, config: dict) -> TrainerConfig:
    base = dict(config.get("trainer", {}))
    overrides = {"tau": args.tau, "entropy_coef": args.eps, "total_steps": args.steps, "seed": args.seed,
                 "lr_policy": args.lr_policy, "lr_adversary": args.lr_adversary, "lr_critic": args.lr_critic,
                 "rollout_len": args.rollout_len}
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.method == "ippo":
        base["tau"] = 0.0
    try:
        return TrainerConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _env_config(args, config: dict) -> GridConfig:
    d = dict(config.get("env", {}))
    if args.env_config:
        d.update(_load_json(args.env_config))
    try:
        return GridConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad environment config: {exc}") from None


def train_runs(method: str, tcfg: TrainerConfig, env: GridConfig, n_seeds: int, out: Path, cfg_hash: str):
    """Train ``n_seeds`` runs (seeds ``tcfg.seed + k``) and write curves and checkpoints into ``out``."""
    ck = out / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    trainer = train_srpo if method == "srpo" else train_ippo
    lines = []
    for k in range(n_seeds):
        cfg = TrainerConfig.from_dict({**tcfg.to_dict(), "seed": tcfg.seed + k})
        res = trainer(cfg, env)
        for slot in (0, 1):
            tables = {"policy": res.policies[slot].logits, "critic": res.critics[slot].values}
            if res.adversaries is not None:
                tables["adversary"] = res.adversaries[slot].logits
            save_checkpoint(ck / f"seed{cfg.seed}_slot{slot + 1}.ckpt", cfg_hash, tables)
        for row in res.curve:
            lines.append([cfg.seed, row["step"]] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]])
        print(f"{method} seed {cfg.seed}: {res.env_steps} env steps, final return "
              f"{res.curve[-1]['mean_return']:.2f}")
    with open(out / "curves.csv", "w") as fh:
        fh.write(f"# {header_comment(cfg_hash)}\n")
        fh.write(",".join(("seed",) + CURVE_COLUMNS) + "\n")
        for line in lines:
            fh.write(",".join(str(v) for v in line) + "\n")


def cmd_train(args) -> int:
    config = _load_json(args.config)
    tcfg = _trainer_config(args, config)
    if args.method == "srpo" and tcfg.tau <= 0:
        raise UsageError("srpo needs --tau > 0")
    env = _env_config(args, config)
    seeds = args.seeds if args.seeds is not None else int(config.get("seeds", 1))
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    payload = {"method": args.method, "seeds": seeds, "trainer": tcfg.to_dict(), "env": env.to_dict(),
               "version": __version__}
    h = config_hash(payload)
    out = _out_dir(args, h)
    _write_config(out / "config.json", payload)
    try:
        train_runs(args.method, tcfg, env, seeds, out, h)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# crossplay
# ---------------------------------------------------------------------------

def load_agents(run_dirs) -> tuple[list, GridConfig]:
    agents, env = [], None
    for d in run_dirs:
        d = Path(d)
        cfg_path = d / "config.json"
        if not cfg_path.exists():
            raise UsageError(f"{d}: no config.json, not a training run directory")
        cfg = _load_json(cfg_path)
        run_env = GridConfig.from_dict(cfg["env"])
        if env is not None and run_env != env:
            raise UsageError("runs were trained on different environments")
        env = run_env
        ck = d / "checkpoints"
        slot1 = sorted(ck.glob("seed*_slot1.ckpt"), key=lambda p: int(p.name[4:].split("_")[0]))
        if not slot1:
            raise UsageError(f"{d}: no checkpoints found")
        for p1 in slot1:
            p2 = p1.with_name(p1.name.replace("_slot1", "_slot2"))
            if not p2.exists():
                raise UsageError(f"{p2} is missing")
            seed = p1.name.split("_")[0]
            pols = tuple(PolicyParams(load_checkpoint(p)[1]["policy"]) for p in (p1, p2))
            agents.append(TrainedAgent(f"{cfg['method']}-{d.name}-{seed}", cfg["method"], pols))
    return agents, env


def cmd_crossplay(args) -> int:
    agents, env = load_agents(args.runs)
    cfg = {"command": "crossplay", "runs": sorted(str(Path(r).resolve().name) for r in args.runs),
           "episodes": args.episodes, "len": args.len, "seed": args.seed}
    h = config_hash(cfg)
    out = _out_dir(args, h)
    M = cross_play(agents, env, args.episodes, args.len, args.seed, workers=args.workers)
    write_matrix_csv(M, out / "matrix.csv", header_comment(h))
    write_long_csv(M, out / "matrix_long.csv", header_comment(h))
    stats = tp_cp_stats(M)
    for label, members in _group_indices(M.labels).items():
        profiles = [free_riding_profile(agents[k], env, args.episodes, args.seed, args.len) for k in members]
        signs = [np.sign(c1 - c2) for c1, c2, _ in profiles]
        stats[label]["fr_degree_mean"] = float(np.mean([d for *_, d in profiles]))
        full = np.zeros(len(agents))
        full[members] = signs
        stats[label]["checkerboard_score"] = checkerboard_score(M, full, members)
    write_stats_json(stats, out / "stats.json")
    _write_config(out / "config.json", cfg)
    for label, s in stats.items():
        print(f"{label}: TP {s['tp_mean']:.2f} CP {s['cp_mean']:.2f} drop {s['drop']:.2f} "
              f"fr_degree {s['fr_degree_mean']:.2f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def _group_indices(labels) -> dict:
    g: dict[str, list] = {}
    for k, lab in enumerate(labels):
        g.setdefault(lab, []).append(k)
    return g


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rqe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rqe_lab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common_out(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", help="output directory (default: <runs-dir>/<config hash>)")
        p.add_argument("--runs-dir", default="runs")

    f = sub.add_parser("finite", help="RQE of 2-player finite collaborative games")
    common_out(f)
    f.add_argument("--game", help="finite game JSON")
    f.add_argument("--example", choices=["coordination"])
    f.add_argument("--eps", type=float)
    f.add_argument("--tau", type=float)
    f.add_argument("--tau-grid", dest="tau_grid")
    f.add_argument("--starts", type=int)
    f.add_argument("--tol", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--delta", type=float)
    f.add_argument("--threshold", action="store_true", help="print the risk level that guarantees --delta")
    f.set_defaults(func=cmd_rqe_finite)

    g = sub.add_parser("gaussian", help="Gaussian RQE of quadratic aggregative games")
    common_out(g)
    g.add_argument("--game")
    g.add_argument("--example", choices=["force"])
    g.add_argument("--abar", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--tau-grid", dest="tau_grid")
    g.set_defaults(func=cmd_rqe_gaussian)

    v = sub.add_parser("verify", help="check Markov-game policy gradients and performance differences")
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--fault", choices=["sign_flip"], help="inject a fault (negative control)")
    v.add_argument("--out", help="JSON report path")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train IPPO or SRPO agents on the gridworld")
    common_out(t)
    t.add_argument("--method", choices=["ippo", "srpo"], required=True)
    t.add_argument("--seeds", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--eps", type=float, help="entropy coefficient")
    t.add_argument("--steps", type=int, help="environment interaction budget per run")
    t.add_argument("--lr-policy", dest="lr_policy", type=float)
    t.add_argument("--lr-adversary", dest="lr_adversary", type=float)
    t.add_argument("--lr-critic", dest="lr_critic", type=float)
    t.add_argument("--rollout-len", dest="rollout_len", type=int)
    t.add_argument("--env-config", dest="env_config", help="gridworld JSON overrides")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("crossplay", help="cross-play matrix of trained runs")
    c.add_argument("runs", nargs="+", help="training run directories")
    c.add_argument("--episodes", type=int, default=100)
    c.add_argument("--len", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--workers", type=int, default=int(os.environ.get("RQE_LAB_THREADS", "1")))
    c.add_argument("--out")
    c.add_argument("--runs-dir", default="runs")
    c.set_defaults(func=cmd_crossplay)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rqe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError) as exc:
        print(f"rqe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
