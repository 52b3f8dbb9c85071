"""Command-line front end: train, eval, replay, and plot.

Exit codes: 0 success, 1 runtime failure (divergence, bad checkpoint,
malformed records), 2 usage or configuration error.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .config import load_config, save_config
from .errors import CheckpointError, ConfigError, ReplayError, TrainingDiverged
from .expert import ExpertConfig, RemoteSupervisor, expert_action
from .nets import load_arrays
from .sim import DriveEnv, SimConfig
from .trainer import TrainingRun, make_agent

OUTPUT_ROOT_VAR = "HDSAC_RUNS"   # default root for relative output paths
BIND_VAR = "HDSAC_BIND"          # overrides the bridge bind address

REMOTE_PACE_HZ = 10.0  # a human can't supervise an unpaced loop


def _resolve_out(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _parse_supervisor(text: str) -> dict:
    """Turn `scripted`, `replay:PATH`, or `remote:PORT` into config fields."""
    if text == "scripted":
        return {"supervisor": "scripted"}
    if text.startswith("replay:"):
        path = text[len("replay:"):]
        if not path:
            raise ConfigError("replay supervisor needs a session path "
                              "(replay:PATH)")
        return {"supervisor": "replay", "session_path": path}
    if text.startswith("remote:"):
        try:
            port = int(text[len("remote:"):])
        except ValueError:
            raise ConfigError(f"bad remote port in {text!r}")
        return {"supervisor": "remote", "port": port}
    raise ConfigError(f"unknown supervisor {text!r} "
                      "(scripted | replay:PATH | remote:PORT)")


def _parse_seeds(text: str) -> list:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(p) for p in part.split("-", 1))
                if hi < lo:
                    raise ValueError(f"empty range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"bad seed list entry {part!r}: {exc}") from exc
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def _print_summary(summary: dict) -> None:
    """One row, same column order as the usual results tables: evaluation
    first, then how much supervision the run consumed."""
    cols = [
        ("return", summary.get("eval_mean_return")),
        ("safety_cost", summary.get("eval_mean_cost")),
        ("success", summary.get("eval_success_rate")),
        ("human_data", summary.get("human_data")),
        ("total_data", summary.get("total_data")),
        ("train_cost", summary.get("train_collisions")),
    ]
    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.2f}" if isinstance(v, float) else str(v)
    widths = [max(len(n), len(fmt(v))) for n, v in cols]
    print("  ".join(n.rjust(w) for (n, _), w in zip(cols, widths)))
    print("  ".join(fmt(v).rjust(w) for (_, v), w in zip(cols, widths)))


# -- train / replay ----------------------------------------------------------

def _execute_run(bundle, out_dir: str) -> int:
    run = dataclasses.replace(bundle.run, out_dir=out_dir)
    if run.supervisor == "remote" and run.pace_hz == 0.0:
        run = dataclasses.replace(run, pace_hz=REMOTE_PACE_HZ)
    bundle = dataclasses.replace(bundle, run=run)

    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.ini"), bundle,
                header=f"hdsac {__version__}")

    supervisor = None
    bridge = None
    if run.supervisor == "remote":
        from .bridge import BridgeServer  # imported on demand: needs a socket
        supervisor = RemoteSupervisor(bundle.sim)
        bind = os.environ.get(BIND_VAR, "127.0.0.1")
        bridge = BridgeServer(bind, run.port, supervisor.mailbox,
                              sim_cfg=bundle.sim)

    training = TrainingRun(run, bundle.algo, bundle.sim, bundle.expert,
                           supervisor=supervisor,
                           on_step=bridge.offer_frame if bridge else None)
    try:
        if bridge is not None:
            bridge.start()
            print(f"bridge listening on ws://{bridge.bind}:{bridge.port}",
                  file=sys.stderr)
        summary = training.run()
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"diagnostic checkpoint: "
              f"{os.path.join(out_dir, 'diverged.ckpt')}", file=sys.stderr)
        return 1
    finally:
        if bridge is not None:
            bridge.stop()

    _print_summary(summary)
    return 0


def cmd_train(args) -> int:
    bundle = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.algo is not None:
        over["algo"] = args.algo
    if args.supervisor is not None:
        over.update(_parse_supervisor(args.supervisor))
    run = dataclasses.replace(bundle.run, **over)
    bundle = dataclasses.replace(bundle, run=run)
    return _execute_run(bundle, _resolve_out(run.out_dir))


def cmd_replay(args) -> int:
    """Re-drive a recorded session under its own run's config snapshot."""
    session = os.path.abspath(args.session)
    if not os.path.isfile(session):
        raise ConfigError(f"session file not found: {args.session}")
    cfg_path = os.path.join(os.path.dirname(session), "config.ini")
    if not os.path.isfile(cfg_path):
        raise ConfigError(
            f"no config.ini beside {args.session}; replay needs the "
            "recording run's own directory (it is written by `train`)")
    bundle = load_config(cfg_path)
    run = dataclasses.replace(bundle.run, supervisor="replay",
                              session_path=session, record_session=False)
    bundle = dataclasses.replace(bundle, run=run)
    out = args.out or os.path.join(os.path.dirname(session), "replay")
    return _execute_run(bundle, _resolve_out(out))


# -- eval --------------------------------------------------------------------

def _rollout(act, sim_cfg, seed: int) -> dict:
    env = DriveEnv(sim_cfg)
    obs = env.reset(seed)
    total, tag = 0.0, "none"
    while tag == "none":
        res = env.step(act(obs, env.state))
        obs = res.observation
        total += res.reward
        tag = res.terminated
    return {"seed": int(seed), "return": round(total, 6),
            "cost": int(env.state.collisions),
            "success": int(tag == "destination"),
            "steps": int(env.state.steps)}


def cmd_eval(args) -> int:
    seeds = _parse_seeds(args.seeds)
    if args.ckpt == "expert":
        # pseudo-checkpoint: the scripted supervisor driving on its own
        sim_cfg, expert_cfg = SimConfig(), ExpertConfig()
        act = lambda obs, world: expert_action(world, expert_cfg, sim_cfg)
    else:
        cfg_path = os.path.join(os.path.dirname(os.path.abspath(args.ckpt)),
                                "config.ini")
        if not os.path.isfile(cfg_path):
            raise ConfigError(
                f"no config.ini beside {args.ckpt}; cannot tell which "
                "algorithm and simulator settings produced it")
        bundle = load_config(cfg_path)
        sim_cfg = bundle.sim
        agent = make_agent(bundle.run.algo, sim_cfg.obs_dim, bundle.algo,
                           seed=0)
        agent.load_state_entries(load_arrays(args.ckpt))
        act = lambda obs, world: agent.act_mean(obs)

    rows = [_rollout(act, sim_cfg, s) for s in seeds]
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    rets = np.array([r["return"] for r in rows], dtype=np.float64)
    print(json.dumps({
        "seeds": len(rows),
        "return_mean": round(float(rets.mean()), 6),
        "return_std": round(float(rets.std()), 6),
        "cost_mean": round(float(np.mean([r["cost"] for r in rows])), 6),
        "success_rate": round(float(np.mean([r["success"] for r in rows])), 6),
    }, sort_keys=True))
    return 0


# -- plot --------------------------------------------------------------------

def _read_jsonl(path: str) -> list:
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}:{ln}: bad metrics record "
                                  f"({exc.msg})") from exc
    return rows


def _series_name(path: str, taken) -> str:
    name = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
    base, k = name, 2
    while name in taken:
        name = f"{base}#{k}"
        k += 1
    taken.add(name)
    return name


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = _resolve_out(args.out)
    os.makedirs(out_dir, exist_ok=True)

    runs = []  # (name, metrics rows, eval rows)
    taken = set()
    for path in args.metrics:
        if not os.path.isfile(path):
            raise ConfigError(f"metrics file not found: {path}")
        eval_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                                 "eval.jsonl")
        eval_rows = _read_jsonl(eval_path) if os.path.isfile(eval_path) else []
        runs.append((_series_name(path, taken), _read_jsonl(path), eval_rows))

    try:
        charts = [
            ("takeover_rate", "takeover rate per window",
             [(n, [(r["step"], r["takeover_rate"]) for r in rows])
              for n, rows, _ in runs]),
            ("training_safety_cost", "cumulative training collisions",
             [(n, [(r["step"], r["cost_total"]) for r in rows])
              for n, rows, _ in runs]),
            ("eval_return", "evaluation return",
             [(n, [(r["step"], r["mean_return"]) for r in ev])
              for n, _, ev in runs]),
        ]
    except KeyError as exc:
        raise ReplayError(f"metrics records lack field {exc.args[0]!r}; "
                          "is this a metrics.jsonl?") from exc

    written = []
    for stem, title, series in charts:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name, pts in series:
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        marker=".", label=name)
        ax.set_xlabel("step")
        ax.set_title(title)
        if any(pts for _, pts in series):
            ax.legend()
        png = os.path.join(out_dir, f"{stem}.png")
        fig.savefig(png)
        plt.close(fig)

        txt = os.path.join(out_dir, f"{stem}.txt")
        with open(txt, "w") as fh:
            fh.write(f"# {title}\n")
            for name, pts in series:
                fh.write(f"# series: {name}\n")
                for x, y in pts:
                    fh.write(f"{x} {repr(float(y))}\n")
        written.extend([png, txt])

    for path in written:
        print(path)
    return 0


# -- dispatch ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hdsac",
        description="Intervention-trained driving agents: reward-free "
                    "distributional critic with a human (or scripted) "
                    "supervisor in the loop.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run training from a config file")
    t.add_argument("--config", required=True, help="INI config path")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--algo", choices=("hdsac", "sac", "pvp"),
                   help="override the config algorithm")
    t.add_argument("--supervisor",
                   help="scripted | replay:PATH | remote:PORT")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="roll out a checkpoint on held-out seeds")
    e.add_argument("--ckpt", required=True,
                   help="checkpoint path, or `expert` for the scripted "
                        "supervisor itself")
    e.add_argument("--seeds", required=True,
                   help="comma list with ranges, e.g. 0,5,9000-9019")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="re-drive a recorded session")
    r.add_argument("--session", required=True, help="run.session path")
    r.add_argument("--out", help="output directory (default: <run>/replay)")
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="curves and tables from metrics logs")
    pl.add_argument("--metrics", required=True, nargs="+",
                    help="metrics.jsonl paths; several overlay")
    pl.add_argument("--out", default="plots", help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
