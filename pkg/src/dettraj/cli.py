"""Command-line pipeline: simulate, pretrain, finetune, evaluate, sweep, plot, gradcheck.

All outputs land under ``--out DIR`` together with the resolved config and
the root seed, which is enough to repeat a run bit for bit.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .sim import OrcaParams, ScenarioConfig

SUBCOMMANDS = ("simulate", "pretrain", "finetune", "evaluate", "sweep", "plot", "gradcheck")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclasses.dataclass
class SimSection:
    steps: int = 60
    max_agents: int = 40
    min_agents: int = 5
    max_obstacles: int = 20
    bounds: tuple = (0.0, 0.0, 15.0, 15.0)
    dt: float = 0.4
    radius: float = 0.3
    pref_speed: float = 1.3
    max_speed: float = 1.8
    min_goal_dist: float = 3.0
    tau: float = 2.0
    tau_obst: float = 2.0
    neighbor_dist: float = 5.0
    goal_tol: float = 0.1


@dataclasses.dataclass
class DataSection:
    t_obs: int = 9
    t_pred: int = 12
    stride: int = 1
    few_shot_frac: float = 1.0


@dataclasses.dataclass
class ModelSection:
    d: int = 128
    layers: int = 9
    heads: int = 4
    d_id: int = 64
    n_futures: int = 1


@dataclasses.dataclass
class PretrainSection:
    epochs: int = 200
    lr: float = 1e-4
    lr_drop_at: float = 0.8
    lr_drop: float = 0.1
    batch_size: int = 16
    p_c: float = 0.3
    sigma: float = 0.5
    tasks: tuple = ("F", "P", "U", "D")
    grad_clip: float = 1.0
    windows_per_epoch: int | None = None


@dataclasses.dataclass
class FinetuneSection:
    mode: str = "weak"
    epochs: int = 50
    lr: float = 1e-4
    lr_drop_at: float = 0.8
    lr_drop: float = 0.1
    batch_size: int = 16
    lam: float = 10.0
    grad_clip: float = 1.0
    windows_per_epoch: int | None = None


@dataclasses.dataclass
class EvalSection:
    err_type: str = "miss"
    err_ratio: float = 0.0
    ratios: tuple = (0.0, 0.2, 0.4, 0.6)
    sigma: float = 0.5
    switch_radius: float = 5.0
    stride: int = 1


SECTIONS = {"sim": SimSection, "data": DataSection, "model": ModelSection,
            "pretrain": PretrainSection, "finetune": FinetuneSection, "eval": EvalSection}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    sim: SimSection = dataclasses.field(default_factory=SimSection)
    data: DataSection = dataclasses.field(default_factory=DataSection)
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    pretrain: PretrainSection = dataclasses.field(default_factory=PretrainSection)
    finetune: FinetuneSection = dataclasses.field(default_factory=FinetuneSection)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)

    def to_dict(self):
        return dataclasses.asdict(self)


def parse_config(doc):
    """Build a RunConfig from a JSON-like dict; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise CliError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS) - {"seed"}
    if unknown:
        raise CliError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(seed=int(doc.get("seed", 0)))
    for name, cls in SECTIONS.items():
        sec = doc.get(name, {})
        if not isinstance(sec, dict):
            raise CliError(f"config section {name!r} must be an object")
        fields = {f.name for f in dataclasses.fields(cls)}
        bad = set(sec) - fields
        if bad:
            raise CliError(f"unknown config key(s) in {name}: {', '.join(sorted(bad))}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}
        setattr(cfg, name, cls(**vals))
    return cfg


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"invalid JSON in {path}: line {e.lineno}: {e.msg}") from None
    return parse_config(doc)


def derive_seed(root, module):
    """Stable per-module seed from the root seed."""
    h = hashlib.sha256(f"{int(root)}:{module}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def worker_count():
    raw = os.environ.get("REALTRAJ_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"REALTRAJ_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(n, os.cpu_count() or 1))


def parse_seed_range(text):
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
        else:
            a = b = int(text)
    except ValueError:
        raise CliError(f"bad --seeds value {text!r} (expected A..B)") from None
    if b < a:
        raise CliError(f"empty seed range {text!r}")
    return list(range(a, b + 1))


def scenario_config(sim):
    return ScenarioConfig(max_agents=sim.max_agents, min_agents=sim.min_agents,
                          max_obstacles=sim.max_obstacles, bounds=tuple(sim.bounds), dt=sim.dt,
                          radius=sim.radius, pref_speed=sim.pref_speed, max_speed=sim.max_speed,
                          min_goal_dist=sim.min_goal_dist)


def orca_params(sim):
    return OrcaParams(tau=sim.tau, tau_obst=sim.tau_obst, neighbor_dist=sim.neighbor_dist,
                      goal_tol=sim.goal_tol)


def model_config(cfg):
    from .model import ModelConfig
    m = cfg.model
    return ModelConfig(d=m.d, layers=m.layers, heads=m.heads, d_id=m.d_id, T_obs=cfg.data.t_obs,
                       T_pred=cfg.data.t_pred, n_futures=m.n_futures)


# ---------------------------------------------------------------- helpers

def _simulate_one(args):
    from .dataio import save_tsv
    from .sim import generate_scenario, rollout
    seed, sim, out = args
    sc = generate_scenario(seed, scenario_config(sim))
    sc.params = orca_params(sim)
    seq = rollout(sc, sim.steps)
    path = os.path.join(out, f"{seq.name}.tsv")
    save_tsv(seq, path)
    return path


def _load_sequences(path):
    from .dataio import load_dir, load_tsv
    if path is None:
        raise CliError("--data is required")
    if os.path.isdir(path):
        seqs = load_dir(path)
    elif os.path.isfile(path):
        seqs = [load_tsv(path)]
    else:
        raise CliError(f"no such data path: {path}")
    if not seqs:
        raise CliError(f"no .tsv sequences in {path}")
    return seqs


def _windows(seqs, cfg, mode, stride=None):
    from .dataio import few_shot, make_windows
    d = cfg.data
    out = [w for s in seqs for w in make_windows(s, d.t_obs, d.t_pred, stride or d.stride, mode)]
    if not out:
        raise CliError("no windows: sequences too short for t_obs + t_pred")
    return few_shot(out, d.few_shot_frac, derive_seed(cfg.seed, "few_shot"))


def _load_ckpt(path):
    from .model import load_checkpoint
    if path is None or path == "none":
        raise CliError("checkpoint required")
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError) as e:
        raise CliError(f"bad checkpoint {path}: {e}") from None


def _start_run(cfg, out):
    if out is None:
        raise CliError("--out is required")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "seed.txt"), "w") as fh:
        fh.write(f"{cfg.seed}\n")


def _train_config(sec, seed, tasks=None):
    from .training import TrainConfig
    kw = {f.name: getattr(sec, f.name) for f in dataclasses.fields(sec) if f.name != "mode"}
    if tasks is not None:
        kw["tasks"] = tuple(tasks)
    return TrainConfig(seed=seed, **kw)


def _predictor(args, cfg):
    from .evaluation import cv_predictor, model_predictor
    if args.ckpt == "cv":
        return cv_predictor
    return model_predictor(_load_ckpt(args.ckpt))


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args, cfg):
    seeds = parse_seed_range(args.seeds or "0..9")
    _start_run(cfg, args.out)
    jobs = [(s, cfg.sim, args.out) for s in seeds]
    n = worker_count()
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            paths = list(ex.map(_simulate_one, jobs))
    else:
        paths = [_simulate_one(j) for j in jobs]
    print(f"wrote {len(paths)} sequences to {args.out}")


def cmd_pretrain(args, cfg):
    from .model import Det2TrajFormer
    from .training import train
    windows = _windows(_load_sequences(args.data), cfg, "full")
    val = _windows(_load_sequences(args.val), cfg, "full") if args.val else None
    _start_run(cfg, args.out)
    model = Det2TrajFormer(model_config(cfg), seed=derive_seed(cfg.seed, "model"))
    tc = _train_config(cfg.pretrain, derive_seed(cfg.seed, "pretrain"))
    _, rows = train(model, windows, "pretrain", tc, val, os.path.join(args.out, "log.csv"),
                    os.path.join(args.out, "model.ckpt"))
    print(f"pretrained {len(rows)} epochs on {len(windows)} windows; checkpoint {args.out}/model.ckpt")


def cmd_finetune(args, cfg):
    from .training import train
    model = _load_ckpt(args.ckpt)
    mode = args.mode or cfg.finetune.mode
    if mode not in ("weak", "supervised"):
        raise CliError(f"unknown finetune mode {mode!r}")
    if args.lam is not None:
        cfg.finetune.lam = args.lam
    cfg.finetune.mode = mode
    windows = _windows(_load_sequences(args.data), cfg, "weak" if mode == "weak" else "full")
    val = _windows(_load_sequences(args.val), cfg, "full") if args.val else None
    _start_run(cfg, args.out)
    tc = _train_config(cfg.finetune, derive_seed(cfg.seed, "finetune"))
    _, rows = train(model, windows, f"finetune-{mode}", tc, val, os.path.join(args.out, "log.csv"),
                    os.path.join(args.out, "model.ckpt"))
    print(f"finetuned ({mode}) {len(rows)} epochs on {len(windows)} windows; checkpoint {args.out}/model.ckpt")


def cmd_evaluate(args, cfg):
    from .evaluation import robustness_sweep, write_report
    predict = _predictor(args, cfg)
    seqs = _load_sequences(args.data)
    e = cfg.eval
    _start_run(cfg, args.out)
    err_type = e.err_type if e.err_ratio > 0 else "none"
    rows = robustness_sweep(predict, seqs, err_type, [e.err_ratio], cfg.data.t_obs, cfg.data.t_pred,
                            e.stride, derive_seed(cfg.seed, "eval"), e.sigma, e.switch_radius)
    write_report(rows, os.path.join(args.out, "report.csv"))
    r = rows[0]
    print(f"ADE={r['ADE']:.6f} FDE={r['FDE']:.6f} n_windows={r['n_windows']}")


def cmd_sweep(args, cfg):
    from .evaluation import robustness_sweep, write_report, write_svg
    predict = _predictor(args, cfg)
    seqs = _load_sequences(args.data)
    e = cfg.eval
    _start_run(cfg, args.out)
    rows = robustness_sweep(predict, seqs, e.err_type, list(e.ratios), cfg.data.t_obs, cfg.data.t_pred,
                            e.stride, derive_seed(cfg.seed, "eval"), e.sigma, e.switch_radius)
    write_report(rows, os.path.join(args.out, "report.csv"))
    write_svg({e.err_type: rows}, os.path.join(args.out, "sweep.svg"))
    for r in rows:
        print(f"{r['error_type']} ratio={r['ratio']:g} ADE={r['ADE']:.6f} FDE={r['FDE']:.6f}")


def cmd_plot(args, cfg):
    from .evaluation import read_report, write_svg
    if not args.reports:
        raise CliError("plot needs at least one --report CSV")
    curves = {}
    for path in args.reports:
        if not os.path.isfile(path):
            raise CliError(f"report not found: {path}")
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        curves[label] = read_report(path)
    if args.out is None:
        raise CliError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    dest = os.path.join(args.out, "curves.svg")
    write_svg(curves, dest, metric=args.metric)
    print(f"wrote {dest}")


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_all
    errs, worst = run_all(seed=cfg.seed)
    for k, v in errs.items():
        print(f"{k}: {v:.3e}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


COMMANDS = {"simulate": cmd_simulate, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "plot": cmd_plot, "gradcheck": cmd_gradcheck}


# ---------------------------------------------------------------- argument parsing

def build_parser():
    p = argparse.ArgumentParser(prog="dettraj", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="directory of .tsv sequences (or one file)")
    data.add_argument("--t-obs", type=int)
    data.add_argument("--t-pred", type=int)
    data.add_argument("--stride", type=int)
    data.add_argument("--few-shot-frac", type=float)
    err = argparse.ArgumentParser(add_help=False)
    err.add_argument("--err-type", choices=["miss", "loc", "idswitch", "combined"])
    err.add_argument("--err-ratio", type=float)
    err.add_argument("--sigma", type=float)
    err.add_argument("--switch-radius", type=float)
    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--ckpt", help="checkpoint path ('cv' for the constant-velocity baseline)")

    s = sub.add_parser("simulate", parents=[common], help="write ORCA rollouts as TSV")
    s.add_argument("--seeds", help="inclusive seed range A..B")
    s = sub.add_parser("pretrain", parents=[common, data], help="pretrain a model")
    s.add_argument("--val", help="validation sequences")
    s = sub.add_parser("finetune", parents=[common, data, ckpt], help="fine-tune a checkpoint")
    s.add_argument("--val", help="validation sequences")
    s.add_argument("--mode", choices=["weak", "supervised"])
    s.add_argument("--lam", type=float, help="acceleration penalty weight")
    sub.add_parser("evaluate", parents=[common, data, err, ckpt], help="ADE/FDE report")
    s = sub.add_parser("sweep", parents=[common, data, err, ckpt], help="robustness sweep")
    s.add_argument("--ratios", help="comma-separated error ratios")
    s = sub.add_parser("plot", parents=[common], help="SVG of sweep reports")
    s.add_argument("--report", dest="reports", action="append", help="report CSV (repeatable)")
    s.add_argument("--metric", default="ADE", choices=["ADE", "FDE", "minADE20", "minFDE20"])
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    return p


def _apply_flags(args, cfg):
    if args.seed is not None:
        cfg.seed = args.seed
    for flag, sec, key in (("t_obs", "data", "t_obs"), ("t_pred", "data", "t_pred"),
                           ("stride", "data", "stride"), ("few_shot_frac", "data", "few_shot_frac"),
                           ("err_type", "eval", "err_type"), ("err_ratio", "eval", "err_ratio"),
                           ("sigma", "eval", "sigma"), ("switch_radius", "eval", "switch_radius")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(getattr(cfg, sec), key, v)
    ratios = getattr(args, "ratios", None)
    if ratios:
        try:
            cfg.eval.ratios = tuple(float(r) for r in ratios.split(","))
        except ValueError:
            raise CliError(f"bad --ratios value {ratios!r}") from None
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    try:
        cfg = _apply_flags(args, load_config(args.config))
        code = COMMANDS[args.command](args, cfg)
        return 0 if code is None else code
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, FloatingPointError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
