"""Command-line pipeline: dataset generation, training, evaluation,
benchmarking, isosurface export and grasp planning.

Every run writes a manifest (<output>.manifest.json) with the resolved
configuration, input hashes and seed — enough to reproduce the run
bit-for-bit in single-worker mode. Exit codes: 0 success, 1 usage,
2 input I/O, 3 numerical failure.
"""
import argparse
import hashlib
import json
import os
import sys as _sys
import time

import numpy as np

from . import __version__
from .evaluate import (bench_throughput, evaluate_field, export_isosurface, scaled_thresholds)
from .field import (ArchConfig, VARIANTS, default_arch, load_checkpoint, param_count,
                    save_checkpoint)
from .grasp import (CompositeSystem, HandChain, PlanOptions, plan_grasp_restarts,
                    read_grasp_problem, write_solution)
from .oracle import OracleField
from .pose import Pose
from .robot import RobotLoadError, load_robot, model_hash
from .sampler import (SamplerConfig, SamplerError, file_sha256, generate_dataset,
                      load_dataset, save_dataset)
from .train import TrainConfig, TrainingError, train

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path, command, resolved, inputs, seed, t0):
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "input_hashes": {str(p): _sha256_file(p) for p in inputs if p and os.path.exists(p)},
        "seed": seed,
        "tool_version": __version__,
        "wall_time_s": time.perf_counter() - t0,
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _apply_config_file(args, parser, argv):
    """Config-file defaults: flags given on the command line win."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {args.config}")
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"config file {args.config}: {e}")
    section = doc.get(args.subcommand, {})
    given = {a.lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in section.items():
        attr = key.replace("-", "_")
        if attr in given or not hasattr(args, attr):
            continue
        setattr(args, attr, value)
    return args


def build_parser():
    p = _Parser(prog="chainsdf", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    g = sub.add_parser("gen-data", help="generate a labeled distance dataset")
    g.add_argument("--robot", required=True, help="robot description (.robot.toml)")
    g.add_argument("--out", required=True, help="output dataset file")
    g.add_argument("--config", help="TOML config file ([gen-data] section); flags win")
    g.add_argument("--configs", type=int, default=1000, help="number of configurations")
    g.add_argument("--points-per-config", type=int, default=200)
    g.add_argument("--d-s", type=float, default=None, help="near-surface band half-width (m); default 5%% of reach")
    g.add_argument("--near-fraction", type=float, default=0.5)
    g.add_argument("--inside-fraction", type=float, default=0.5)
    g.add_argument("--expansion", type=float, default=0.05, help="joint-limit expansion fraction")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--csv", help="optional debug CSV export path")

    t = sub.add_parser("train", help="train a field on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="output checkpoint file")
    t.add_argument("--config", help="TOML config file ([train] section); flags win")
    t.add_argument("--variant", default="rndf", help=f"one of {', '.join(VARIANTS)}")
    t.add_argument("--latent", type=int, default=64, help="latent feature size K")
    t.add_argument("--frequencies", type=int, default=4, help="positional encoding frequencies L")
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--schedule", default="cosine", choices=("constant", "cosine"))
    t.add_argument("--optimizer", default="adaptive-moment", choices=("adaptive-moment", "sgd-momentum"))
    t.add_argument("--weight-decay", type=float, default=1e-6)
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="training log path (JSON lines); default <out>.log")

    e = sub.add_parser("eval", help="evaluate a checkpoint (or the exact oracle) on a test dataset")
    e.add_argument("--checkpoint", help="trained checkpoint to evaluate")
    e.add_argument("--oracle-robot", help="evaluate the exact oracle of this robot instead")
    e.add_argument("--testset", required=True)
    e.add_argument("--close-threshold", type=float, default=None,
                   help="close/far split (m); default 0.1 scaled by reach/0.8 when --robot is given, else 0.1")
    e.add_argument("--band", type=float, default=None,
                   help="classification band (m); default 0.03 scaled like the threshold")
    e.add_argument("--robot", help="robot description, used to scale default thresholds")
    e.add_argument("--out", required=True, help="report path prefix (.txt/.json written)")

    b = sub.add_parser("bench", help="throughput benchmark with the GJK baseline")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--batch-size", type=int, default=100_000)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--float32", action="store_true", help="benchmark in float32 (flagged in the report)")
    b.add_argument("--out", required=True, help="timing table path (.json)")
    b.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("isosurface", help="export a marching-cubes isosurface mesh")
    i.add_argument("--checkpoint")
    i.add_argument("--oracle-robot", help="use the exact oracle of this robot instead of a checkpoint")
    i.add_argument("--q", required=True, help="comma-separated configuration, radians")
    i.add_argument("--level", type=float, default=0.001)
    i.add_argument("--resolution", type=int, default=128)
    i.add_argument("--bounds", type=float, default=None,
                   help="half-width of the cubic grid (m); default 1.1x robot reach if --robot given")
    i.add_argument("--robot", help="robot description used to derive default bounds")
    i.add_argument("--out", required=True, help="output OBJ path")

    pl = sub.add_parser("plan", help="plan a grasp configuration")
    pl.add_argument("--system", required=True, help="composite system description (TOML)")
    pl.add_argument("--problem", required=True, help="grasp problem document (TOML)")
    pl.add_argument("--restarts", type=int, default=8)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--max-outer", type=int, default=12)
    pl.add_argument("--out", required=True, help="solution path prefix")
    pl.add_argument("--scene-obj", help="optional OBJ scene dump (robot level set + points)")
    return p


def _load_field_for(args, allow_oracle=True):
    if getattr(args, "checkpoint", None):
        f = load_checkpoint(args.checkpoint)
        return f, args.checkpoint
    if allow_oracle and getattr(args, "oracle_robot", None):
        model = load_robot(args.oracle_robot)
        return OracleField(model), args.oracle_robot
    raise UsageError("either --checkpoint or --oracle-robot is required")


def cmd_gen_data(args):
    t0 = time.perf_counter()
    model = load_robot(args.robot)
    cfg = SamplerConfig(
        configs_count=args.configs,
        points_per_config=args.points_per_config,
        d_s=args.d_s,
        near_surface_fraction=args.near_fraction,
        inside_fraction=args.inside_fraction,
        limit_expansion=args.expansion,
        seed=args.seed,
    )
    ds = generate_dataset(model, cfg)
    save_dataset(ds, args.out)
    if args.csv:
        from .sampler import dataset_to_csv

        dataset_to_csv(ds, args.csv)
    _write_manifest(args.out, "gen-data", ds.metadata["config"], [args.robot], args.seed, t0)
    print(f"wrote {len(ds)} records to {args.out} "
          f"(inside fraction {ds.inside_fraction():.4f}, sha256 {file_sha256(args.out)[:16]}...)")
    return EXIT_OK


def cmd_train(args):
    t0 = time.perf_counter()
    if args.variant not in VARIANTS:
        raise UsageError(f"invalid variant {args.variant!r}; valid variants: {', '.join(VARIANTS)}")
    ds = load_dataset(args.dataset)
    m = ds.q.shape[1]
    n = ds.d.shape[1]
    arch = default_arch(args.variant, m, n, latent_size=args.latent,
                        encoding_frequencies=args.frequencies)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lr_schedule=args.schedule,
        optimizer=args.optimizer,
        weight_decay=args.weight_decay,
        validation_fraction=args.val_fraction,
        patience=args.patience,
        seed=args.seed,
    )
    log_path = args.log or f"{args.out}.log"
    result = train(ds, arch, cfg, log_path=log_path)
    meta = {
        "dataset_hash": _sha256_file(args.dataset),
        "train_config": cfg.__dict__,
        "best_epoch": result.best_epoch,
        "best_val_rmse": result.best_val_rmse,
        "diverged": result.diverged,
    }
    save_checkpoint(args.out, result.params, robot_hash=ds.metadata.get("robot_hash"), metadata=meta)
    _write_manifest(args.out, "train", {**cfg.__dict__, "arch": arch.to_dict()},
                    [args.dataset], args.seed, t0)
    if result.diverged:
        print(f"training diverged; last good checkpoint written to {args.out}", file=_sys.stderr)
        return EXIT_NUMERICAL
    print(f"trained {args.variant} ({param_count(arch)} params): "
          f"best val RMSE {result.best_val_rmse * 1000:.3f} mm at epoch {result.best_epoch}; "
          f"checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args):
    t0 = time.perf_counter()
    f, source = _load_field_for(args)
    ds = load_dataset(args.testset)
    if getattr(f, "robot_hash", None) and ds.metadata.get("robot_hash") \
            and f.robot_hash != ds.metadata["robot_hash"]:
        raise ValueError(
            f"robot hash mismatch: checkpoint was trained for {f.robot_hash[:12]}... but "
            f"the test set belongs to {ds.metadata['robot_hash'][:12]}...; refusing to evaluate"
        )
    close_thr, band = args.close_threshold, args.band
    if close_thr is None or band is None:
        if args.robot:
            model = load_robot(args.robot)
            c, b = scaled_thresholds(model.reach_radius())
        else:
            c, b = 0.100, 0.030
        close_thr = close_thr if close_thr is not None else c
        band = band if band is not None else b
    pc = f.params.count if hasattr(f, "params") else None
    report = evaluate_field(f, ds, close_thr, band, param_count=pc,
                            metadata={"field": str(source), "testset": args.testset})
    with open(f"{args.out}.txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    with open(f"{args.out}.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    _write_manifest(args.out, "eval", {"close_threshold": close_thr, "band": band},
                    [getattr(args, "checkpoint", None), args.testset], 0, t0)
    print(report.to_text())
    return EXIT_OK


def cmd_bench(args):
    t0 = time.perf_counter()
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    f = load_checkpoint(args.checkpoint)
    timing = bench_throughput(
        f,
        batch_size=args.batch_size,
        repeats=args.repeats,
        dtype=np.float32 if args.float32 else np.float64,
        rng=np.random.default_rng(args.seed),
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
    _write_manifest(args.out, "bench", timing, [args.checkpoint], args.seed, t0)
    print(json.dumps(timing, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_isosurface(args):
    t0 = time.perf_counter()
    f, source = _load_field_for(args)
    try:
        q = np.array([float(x) for x in args.q.split(",")] if args.q.strip() else [],
                     dtype=np.float64)
    except ValueError:
        raise UsageError(f"could not parse --q {args.q!r} as comma-separated floats")
    if args.bounds is not None:
        half = args.bounds
    elif args.robot:
        half = 1.1 * load_robot(args.robot).reach_radius()
    elif getattr(args, "oracle_robot", None):
        half = 1.1 * load_robot(args.oracle_robot).reach_radius()
    else:
        raise UsageError("--bounds is required when no robot description is given")
    bounds = ((-half, -half, -half), (half, half, half))
    nv, nf = export_isosurface(args.out, f, q, args.level, args.resolution, bounds)
    _write_manifest(args.out, "isosurface",
                    {"level": args.level, "resolution": args.resolution, "bounds_half": half},
                    [getattr(args, "checkpoint", None)], 0, t0)
    print(f"wrote {nv} vertices / {nf} triangles to {args.out}")
    if nv == 0:
        print("warning: empty isosurface (level outside the sampled field range)", file=_sys.stderr)
    return EXIT_OK


def load_system(path):
    """Composite system from a TOML document (docs/formats.md)."""
    base_dir = os.path.dirname(str(path))
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    def field_for(tbl, model):
        spec = tbl.get("field", "oracle")
        if spec == "oracle":
            return OracleField(model)
        f = load_checkpoint(resolve(spec))
        if f.robot_hash and f.robot_hash != model_hash(model):
            raise ValueError(f"checkpoint {spec} does not match robot {model.name}")
        return f

    def pose_of(tbl):
        if tbl is None:
            return Pose.identity()
        return Pose.from_rpy(tbl.get("translation", [0, 0, 0]), tbl.get("rpy", [0, 0, 0]))

    arm_tbl = doc["arm"]
    arm_model = load_robot(resolve(arm_tbl["robot"]))
    arm_field = field_for(arm_tbl, arm_model)
    chains = []
    for tbl in doc.get("chains", []):
        model = load_robot(resolve(tbl["robot"]))
        chains.append(HandChain(field=field_for(tbl, model), offset=pose_of(tbl.get("offset")),
                                model=model))
    return CompositeSystem(
        arm_model,
        arm_field,
        chains,
        mount_link=arm_tbl.get("mount_link"),
        mount_offset=pose_of(arm_tbl.get("mount_offset")),
    )


def cmd_plan(args):
    t0 = time.perf_counter()
    system = load_system(args.system)
    problem = read_grasp_problem(args.problem)
    options = PlanOptions(max_outer=args.max_outer)
    best, all_solutions = plan_grasp_restarts(system, problem, args.restarts,
                                              seed=args.seed, options=options)
    write_solution(args.out, best)
    statuses = [s.status for s in all_solutions]
    _write_manifest(args.out, "plan",
                    {"restarts": args.restarts, "statuses": statuses, "max_outer": args.max_outer},
                    [args.system, args.problem], args.seed, t0)
    if args.scene_obj:
        _dump_scene(args.scene_obj, system, problem, best)
    print(best.to_text())
    print(f"restart statuses: {statuses}")
    return EXIT_OK


def _dump_scene(path, system, problem, solution):
    from .evaluate import extract_isosurface
    from .geometry import save_obj

    reach = system.arm_model.reach_radius() + 0.2
    bounds = ((-reach, -reach, -reach), (reach, reach, reach))
    verts, faces = extract_isosurface(system, solution.q, 0.0, 96, bounds)
    save_obj(path, verts, faces)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("# object / obstacle points\n")
        for p in problem.object_points:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for p in problem.obstacle_points:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "isosurface": cmd_isosurface,
    "plan": cmd_plan,
}


def main(argv=None):
    argv = list(_sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args, parser, argv)
        return COMMANDS[args.subcommand](args)
    except UsageError as e:
        print(f"usage error: {e}", file=_sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"input error: {e}", file=_sys.stderr)
        return EXIT_IO
    except (RobotLoadError, ValueError) as e:
        print(f"input error: {e}", file=_sys.stderr)
        return EXIT_IO
    except (SamplerError, TrainingError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
