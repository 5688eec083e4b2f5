"""Command-line surface tying the pipeline together.

Commands: gen-data, build-pool, train-nsgf, train-nsf, train-tp, infer,
eval, pipeline, selftest.  Every command is deterministic given its config
(seeds included); outputs go only under --out.  Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import SCHEMA, ConfigError, RunConfig, config_hash, load_config
from .core_ot import SolverError
from .data_eval import dataset_sampler, evaluate, sample_dataset
from .flow import FlowSolveError, build_pool, data_diameter
from .io_formats import (
    FormatError,
    append_result_row,
    read_checkpoint,
    read_points_csv,
    read_pool,
    read_pool_meta,
    write_checkpoint,
    write_json,
    write_loss_csv,
    write_points_csv,
    write_pool,
    write_svg_scatter,
    write_trajectory_csv,
)
from .neural import (
    TrainingError,
    train_nsf,
    train_time_predictor,
    train_velocity_matching,
)
from .sampler import NsgfPpConfig, SamplingError, nsgf_infer, nsgf_infer_refined, nsgf_pp_infer
from .selftest import run_selftest

COMMANDS = (
    "gen-data",
    "build-pool",
    "train-nsgf",
    "train-nsf",
    "train-tp",
    "infer",
    "eval",
    "pipeline",
    "selftest",
)

PIPELINE_STEP_COUNTS = (10, 100)


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the contract wants 1.
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sinkflow", description="Sinkhorn gradient-flow generative modeling")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file with flat dotted keys")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed for gen/flow/train/infer")
        p.add_argument("--force", action="store_true", help="overwrite existing checkpoints")
        p.add_argument("--fresh", action="store_true", help="ignore the pipeline stage cache")
        p.add_argument("--svg", action="store_true", help="emit scatter plots")
        p.add_argument("--trajectory", action="store_true", help="emit per-step trajectory CSV")
        p.add_argument("--dry-run", dest="dry_run", action="store_true", help="print the stage plan only")
        for key, field in SCHEMA.items():
            p.add_argument(f"--{key}", dest=key, default=None, metavar="V", help=field.help)
    return parser


def _task_label(cfg: RunConfig) -> str:
    source, target = cfg["dataset.source"], cfg["dataset.target"]
    return target if source == "gaussian" else f"{source}-{target}"


def _resolve_flow_step(cfg: RunConfig) -> float:
    """Explicit flow.step_size, or 0.05 * data diameter of a reference draw."""
    if cfg["flow.step_size"] > 0.0:
        return cfg["flow.step_size"]
    rng = np.random.default_rng([cfg["flow.seed"], 0x5F])
    src = dataset_sampler(cfg["dataset.source"], cfg["dataset.noise"])(512, rng)
    tgt = dataset_sampler(cfg["dataset.target"], cfg["dataset.noise"])(512, rng)
    return 0.05 * data_diameter(src, tgt)


def _pool_path(out: str) -> str:
    return os.path.join(out, "pool.csv")


_CHECKPOINTS = {
    "nsgf": ("infer.checkpoint", "vnet.json", "v_theta"),
    "nsf": ("infer.nsf_checkpoint", "nsf.json", "u_delta"),
    "tp": ("infer.tp_checkpoint", "tp.json", "t_phi"),
}


def _checkpoint_path(cfg: RunConfig, out: str, kind: str) -> str:
    key, default_name, _ = _CHECKPOINTS[kind]
    return cfg[key] or os.path.join(out, default_name)


def _cmd_gen_data(cfg: RunConfig, args) -> int:
    which = cfg["gen.which"]
    spec = cfg.dataset(which, cfg["gen.seed"])
    pts = sample_dataset(spec, cfg["gen.n"])
    path = os.path.join(args.out, f"data_{which}.csv")
    write_points_csv(path, pts)
    if args.svg:
        write_svg_scatter(path[:-4] + ".svg", pts)
    print(f"wrote {path}: {pts.shape[0]} points from {spec.name}")
    return 0


def _cmd_build_pool(cfg: RunConfig, args) -> int:
    step = _resolve_flow_step(cfg)
    fcfg = cfg.flow(step)
    pool = build_pool(
        dataset_sampler(cfg["dataset.source"], cfg["dataset.noise"]),
        dataset_sampler(cfg["dataset.target"], cfg["dataset.noise"]),
        fcfg,
        source_name=cfg["dataset.source"],
        target_name=cfg["dataset.target"],
    )
    path = _pool_path(args.out)
    write_pool(path, pool)
    print(
        f"wrote {path}: {len(pool)} records "
        f"({fcfg.num_batches} batches x {fcfg.batch_size} x {fcfg.steps} steps, "
        f"eta={fcfg.step_size:.6g}, epsilon={fcfg.sinkhorn.epsilon:.6g})"
    )
    return 0


def _guard_overwrite(path: str, force: bool):
    if os.path.exists(path) and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _train_one(cfg: RunConfig, out: str, kind: str, force: bool, seed_offset: int = 0) -> str:
    """Shared driver for the three training commands; returns the checkpoint path."""
    ckpt = os.path.join(out, _CHECKPOINTS[kind][1])
    loss_path = ckpt[: -len(".json")] + "_loss.csv"
    _guard_overwrite(ckpt, force)
    tcfg = cfg.train(seed_offset)
    if kind == "nsgf":
        pool_path = _pool_path(out)
        if not os.path.exists(pool_path):
            raise ConfigError(f"no trajectory pool at {pool_path}; run build-pool first")
        pool = read_pool(pool_path)
        spec = cfg.velocity_spec(pool.meta.dim)
        result = train_velocity_matching(pool, spec, tcfg)
    else:
        source = dataset_sampler(cfg["dataset.source"], cfg["dataset.noise"])
        target = dataset_sampler(cfg["dataset.target"], cfg["dataset.noise"])
        dim = sample_dataset(cfg.dataset("source", 0), 1).shape[1]
        if kind == "nsf":
            result = train_nsf(source, target, cfg.velocity_spec(dim), tcfg)
        else:
            result = train_time_predictor(source, target, cfg.time_predictor_spec(dim), tcfg)
    write_checkpoint(ckpt, result.params, tcfg.seed, result.final_loss)
    write_loss_csv(loss_path, result.losses)
    print(f"wrote {ckpt}: final loss {result.final_loss:.6g} after {tcfg.iterations} iterations")
    return ckpt


def _cmd_train(kind: str):
    def run(cfg: RunConfig, args) -> int:
        _train_one(cfg, args.out, kind, args.force)
        return 0

    return run


def _load_checkpoint_or_fail(cfg: RunConfig, out: str, kinds) -> dict:
    missing, loaded = [], {}
    for kind in kinds:
        path = _checkpoint_path(cfg, out, kind)
        if not os.path.exists(path):
            missing.append(f"{_CHECKPOINTS[kind][2]} ({path})")
        else:
            loaded[kind], _ = read_checkpoint(path)
    if missing:
        raise ConfigError(f"missing checkpoint(s) for mode: {', '.join(missing)}")
    return loaded


def _infer_step_size(cfg: RunConfig, out: str, steps: int) -> float:
    """Explicit infer.step_size, or pool flow time divided by the step count."""
    if cfg["infer.step_size"] > 0.0:
        return cfg["infer.step_size"]
    if steps == 0:
        return 0.0
    pool_path = _pool_path(out)
    if not os.path.exists(pool_path + ".meta.json") and not os.path.exists(
        pool_path[:-4] + ".meta.json"
    ):
        raise ConfigError(
            f"no pool metadata under {out} to derive the step size; set --infer.step_size"
        )
    meta = read_pool_meta(pool_path)
    return meta["steps"] * meta["step_size"] / steps


def _nfe_summary(nfe: np.ndarray) -> str:
    values, counts = np.unique(nfe, return_counts=True)
    body = ", ".join(f"{int(v)}: {int(c)}" for v, c in zip(values, counts))
    return f"nfe per sample: {{{body}}} (mean {float(nfe.mean()):.4g})"


def _flow_net_sample(cfg: RunConfig, out: str, params, prior, steps: int, record_trajectory=False):
    """Sample the flow net: trained schedule, refined substeps, or regridded.

    With auto step size, step counts that are multiples of the pool's steps
    use substeps with the trained time inputs; anything else falls back to
    a uniform regrid of the pool's total flow time.
    """
    if cfg["infer.step_size"] > 0.0 or steps == 0:
        step_size = _infer_step_size(cfg, out, steps)
        return nsgf_infer(params, prior, steps, step_size, record_trajectory)
    meta = read_pool_meta(_pool_path(out))
    pool_steps = int(meta["steps"])
    if steps % pool_steps == 0:
        return nsgf_infer_refined(
            params, prior, pool_steps, float(meta["step_size"]), steps // pool_steps, record_trajectory
        )
    return nsgf_infer(params, prior, steps, _infer_step_size(cfg, out, steps), record_trajectory)


def _cmd_infer(cfg: RunConfig, args) -> int:
    mode = cfg["infer.mode"]
    prior = sample_dataset(cfg.dataset("source", cfg["infer.seed"]), cfg["infer.n"])
    if mode == "nsgf":
        nets = _load_checkpoint_or_fail(cfg, args.out, ("nsgf",))
        steps = cfg["infer.steps"]
        result = _flow_net_sample(cfg, args.out, nets["nsgf"], prior, steps, args.trajectory)
        out_path = os.path.join(args.out, f"samples_nsgf_{steps}.csv")
        trajectory = result.trajectory
        print(f"nfe per sample: {result.nfe} (total steps {steps})")
    else:
        nets = _load_checkpoint_or_fail(cfg, args.out, ("nsgf", "tp", "nsf"))
        meta = read_pool_meta(_pool_path(args.out))
        pp_cfg = NsgfPpConfig(
            nsgf_steps=min(cfg["nsgfpp.nsgf_steps"], int(meta["steps"])),
            nsgf_step_size=float(meta["step_size"]),
            nsf_step_size=cfg["nsgfpp.nsf_step_size"],
            seed=cfg["infer.seed"],
            batch_handoff=cfg["nsgfpp.batch_handoff"],
            time_denominator=int(meta["steps"]),
        )
        result = nsgf_pp_infer(
            nets["nsgf"], nets["tp"], nets["nsf"], prior, pp_cfg, record_trajectory=args.trajectory
        )
        out_path = os.path.join(args.out, "samples_nsgfpp.csv")
        trajectory = result.trajectory
        with open(os.path.join(args.out, "nfe_nsgfpp.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("sample,nfe\n")
            for i, v in enumerate(result.nfe):
                fh.write(f"{i},{int(v)}\n")
        print(_nfe_summary(result.nfe))
    write_points_csv(out_path, result.points)
    if args.trajectory:
        write_trajectory_csv(out_path[:-4] + "_traj.csv", trajectory)
    if args.svg:
        write_svg_scatter(out_path[:-4] + ".svg", result.points)
    print(f"wrote {out_path}")
    return 0


def _cmd_eval(cfg: RunConfig, args) -> int:
    path = cfg["eval.file"]
    if not path:
        raise ConfigError("eval requires --eval.file pointing at a samples CSV")
    generated = read_points_csv(path)
    spec = cfg.dataset("target", cfg["eval.seed"])
    steps_used = cfg["eval.steps"] or cfg["infer.steps"]
    report = evaluate(generated, spec, n_eval=cfg["eval.n_eval"], steps_used=steps_used)
    print(
        json.dumps(
            {"dataset": spec.name, "steps": report.steps_used, "w2": report.w2, "seed": report.seed}
        )
    )
    label = os.path.splitext(os.path.basename(path))[0]
    append_result_row(
        os.path.join(args.out, "results.csv"),
        {"label": label, "dataset": spec.name, "steps": report.steps_used, "w2": report.w2, "seed": report.seed},
    )
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

_STAGE_INPUTS = {
    "gen": ("dataset.", "gen."),
    "pool": ("dataset.", "sinkhorn.", "flow."),
    "train_nsgf": ("dataset.", "sinkhorn.", "flow.", "mlp.", "train."),
    "train_nsf": ("dataset.", "mlp.", "train."),
    "train_tp": ("dataset.", "mlp.", "train."),
    "sample_eval": ("dataset.", "sinkhorn.", "flow.", "mlp.", "train.", "nsgfpp.", "infer.", "eval."),
}

_STAGE_OUTPUTS = {
    "gen": ("data_source.csv", "data_target.csv"),
    "pool": ("pool.csv", "pool.meta.json"),
    "train_nsgf": ("vnet.json", "vnet_loss.csv"),
    "train_nsf": ("nsf.json", "nsf_loss.csv"),
    "train_tp": ("tp.json", "tp_loss.csv"),
    "sample_eval": ("summary.csv", "summary.json", "results.csv"),
}


def _stage_key(cfg: RunConfig, stage: str) -> str:
    payload = {"stage": stage, "config": cfg.subset(_STAGE_INPUTS[stage])}
    return config_hash(payload)


def _stage_gen(cfg: RunConfig, out: str, args):
    for which, offset in (("source", 0), ("target", 1)):
        spec = cfg.dataset(which, cfg["gen.seed"] + offset)
        write_points_csv(os.path.join(out, f"data_{which}.csv"), sample_dataset(spec, cfg["gen.n"]))


def _stage_pool(cfg: RunConfig, out: str, args):
    step = _resolve_flow_step(cfg)
    pool = build_pool(
        dataset_sampler(cfg["dataset.source"], cfg["dataset.noise"]),
        dataset_sampler(cfg["dataset.target"], cfg["dataset.noise"]),
        cfg.flow(step),
        source_name=cfg["dataset.source"],
        target_name=cfg["dataset.target"],
    )
    write_pool(_pool_path(out), pool)


def _stage_sample_eval(cfg: RunConfig, out: str, args):
    nets = _load_checkpoint_or_fail(cfg, out, ("nsgf", "tp", "nsf"))
    meta = read_pool_meta(_pool_path(out))
    flow_time = meta["steps"] * meta["step_size"]
    prior = sample_dataset(cfg.dataset("source", cfg["infer.seed"]), cfg["infer.n"])
    eval_spec = cfg.dataset("target", cfg["eval.seed"])
    n_eval = cfg["eval.n_eval"]
    task = _task_label(cfg)
    results_path = os.path.join(out, "results.csv")

    w2 = {}
    for steps in PIPELINE_STEP_COUNTS:
        if steps % int(meta["steps"]) == 0:
            flow_pts = nsgf_infer_refined(
                nets["nsgf"], prior, int(meta["steps"]), float(meta["step_size"]), steps // int(meta["steps"])
            ).points
        else:
            flow_pts = nsgf_infer(nets["nsgf"], prior, steps, flow_time / steps).points
        straight_pts = nsgf_infer(nets["nsf"], prior, steps, 1.0 / steps).points
        for label, pts in (("nsgf", flow_pts), ("nsf", straight_pts)):
            path = os.path.join(out, f"samples_{label}_{steps}.csv")
            write_points_csv(path, pts)
            if args.svg:
                write_svg_scatter(path[:-4] + ".svg", pts)
            report = evaluate(pts, eval_spec, n_eval=n_eval, steps_used=steps)
            w2[(label, steps)] = report.w2
            append_result_row(
                results_path,
                {"label": f"{label}_{steps}", "dataset": task, "steps": steps, "w2": report.w2, "seed": report.seed},
            )

    pp_cfg = NsgfPpConfig(
        nsgf_steps=min(cfg["nsgfpp.nsgf_steps"], int(meta["steps"])),
        nsgf_step_size=float(meta["step_size"]),
        nsf_step_size=cfg["nsgfpp.nsf_step_size"],
        seed=cfg["infer.seed"],
        batch_handoff=cfg["nsgfpp.batch_handoff"],
        time_denominator=int(meta["steps"]),
    )
    pp = nsgf_pp_infer(nets["nsgf"], nets["tp"], nets["nsf"], prior, pp_cfg)
    pp_path = os.path.join(out, "samples_nsgfpp.csv")
    write_points_csv(pp_path, pp.points)
    mean_nfe = float(pp.nfe.mean())
    pp_report = evaluate(pp.points, eval_spec, n_eval=n_eval, steps_used=int(round(mean_nfe)))
    append_result_row(
        results_path,
        {"label": "nsgfpp", "dataset": task, "steps": pp_report.steps_used, "w2": pp_report.w2, "seed": pp_report.seed},
    )

    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dataset,steps,nsgf_w2,nsf_w2\n")
        for steps in PIPELINE_STEP_COUNTS:
            fh.write(
                f"{task},{steps},{w2[('nsgf', steps)]:.6f},{w2[('nsf', steps)]:.6f}\n"
            )
    write_json(
        os.path.join(out, "summary.json"),
        {
            "format_version": 1,
            "task": task,
            "nsgf_w2": {str(s): w2[("nsgf", s)] for s in PIPELINE_STEP_COUNTS},
            "nsf_w2": {str(s): w2[("nsf", s)] for s in PIPELINE_STEP_COUNTS},
            "nsgfpp": {"w2": pp_report.w2, "mean_nfe": mean_nfe, "flow_steps": pp_cfg.nsgf_steps},
        },
    )
    print(f"task {task}")
    print("dataset  steps  nsgf_w2  nsf_w2")
    for steps in PIPELINE_STEP_COUNTS:
        print(f"{task}  {steps}  {w2[('nsgf', steps)]:.4f}  {w2[('nsf', steps)]:.4f}")
    print(f"nsgf++: w2 {pp_report.w2:.4f} at mean nfe {mean_nfe:.2f}")


def _cmd_pipeline(cfg: RunConfig, args) -> int:
    out = args.out
    stages = [
        ("gen", _stage_gen),
        ("pool", _stage_pool),
        ("train_nsgf", lambda c, o, a: _train_one(c, o, "nsgf", True, 0)),
        ("train_nsf", lambda c, o, a: _train_one(c, o, "nsf", True, 1)),
        ("train_tp", lambda c, o, a: _train_one(c, o, "tp", True, 2)),
        ("sample_eval", _stage_sample_eval),
    ]
    if args.dry_run:
        print(f"pipeline plan for task {_task_label(cfg)}:")
        for name, _fn in stages:
            outputs = ", ".join(_STAGE_OUTPUTS[name])
            print(f"  {name}: key {_stage_key(cfg, name)} -> {outputs}")
        return 0

    cache_path = os.path.join(out, "cache.json")
    cache = {}
    if os.path.exists(cache_path) and not args.fresh:
        with open(cache_path, "r", encoding="utf-8") as fh:
            cache = json.load(fh)
    for name, fn in stages:
        key = _stage_key(cfg, name)
        outputs = [os.path.join(out, f) for f in _STAGE_OUTPUTS[name]]
        if not args.fresh and cache.get(name) == key and all(os.path.exists(p) for p in outputs):
            print(f"stage {name}: cached")
            continue
        print(f"stage {name}: running")
        try:
            fn(cfg, out, args)
        except Exception as exc:
            # Abort with the stage name; completed artifacts stay on disk.
            message = f"pipeline stage {name}: {exc}"
            if isinstance(exc, (ValueError, RuntimeError)):
                raise type(exc)(message) from exc
            raise RuntimeError(message) from exc
        cache[name] = key
        write_json(cache_path, cache)
    return 0


def _cmd_selftest(cfg: RunConfig, args) -> int:
    failures = 0
    for name, ok, detail in run_selftest():
        if ok:
            print(f"ok   {name}")
        else:
            failures += 1
            print(f"FAIL {name}: {detail}")
    if failures:
        print(f"{failures} check(s) failed")
        return 2
    print("all checks passed")
    return 0


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "build-pool": _cmd_build_pool,
    "train-nsgf": _cmd_train("nsgf"),
    "train-nsf": _cmd_train("nsf"),
    "train-tp": _cmd_train("tp"),
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k in SCHEMA and v is not None}
        cfg = load_config(args.config, overrides, seed=args.seed)
        if args.command not in ("selftest",) and not args.dry_run:
            os.makedirs(args.out, exist_ok=True)
        return _DISPATCH[args.command](cfg, args)
    except (ConfigError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, FlowSolveError, TrainingError, SamplingError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # no raw tracebacks from the CLI
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
