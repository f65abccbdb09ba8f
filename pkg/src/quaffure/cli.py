"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
import time

import numpy as np

from .errors import QuaffureError, SolverError, TrainingError, ValidationError


EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "QUAFFURE_THREADS"


def _limit_threads(n):
    """Context capping BLAS and numba worker pools; ``n <= 0`` leaves defaults."""
    if n <= 0:
        return contextlib.nullcontext()
    import numba
    from threadpoolctl import threadpool_limits

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    return threadpool_limits(limits=n)


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.from_file(args.config)
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer") from None
    cfg.with_overrides(solver=getattr(args, "solver", None), iters=args.iters, seed=args.seed, threads=threads,
                       out=args.out, deterministic=args.deterministic)
    if cfg.deterministic:
        cfg.solver = cfg.solver.replace(jacobi=False)
        cfg.threads = 1 if cfg.threads == 0 else cfg.threads
    return cfg


def _scene(cfg, body):
    from .kinematics import PoseParams

    beta = None
    pose = None
    if body is not None:
        beta = np.zeros(body.shape_dim) if cfg.beta is None else cfg.beta
        pose = PoseParams.zeros(body.n_joints) if cfg.pose is None else PoseParams.from_vector(cfg.pose, body.n_joints)
    return beta, pose


def _grooms(cfg, body):
    from .config import resolve_groom

    return [resolve_groom(g, body) for g in cfg.grooms]


def _groom_body(groom, body):
    """Fixtures without an attachment (hanging strand, helix) drape free of the body."""
    return body if groom.n_strands and np.all(groom.attachment_triangle >= 0) else None


def cmd_drape(cfg):
    from .config import resolve_body
    from .estimators import QuasiStaticDrape
    from .evaluate import write_metrics_csv
    from .io import save_groom
    from .solvers import write_trace_csv

    cfg.validate(("grooms", "body"))
    body = resolve_body(cfg.body)
    grooms = _grooms(cfg, body)
    if not 0 <= cfg.groom_index < len(grooms):
        raise ValidationError(f"groom_index {cfg.groom_index} out of range")
    groom = grooms[cfg.groom_index]
    body = _groom_body(groom, body)
    beta, pose = _scene(cfg, body)
    est = QuasiStaticDrape(method=cfg.solver.method, max_iter=cfg.solver.max_iter, material=cfg.material)
    est.fit(groom, body)
    est.solve_config_ = cfg.solver
    os.makedirs(cfg.out, exist_ok=True)
    stem = os.path.join(cfg.out, f"drape_{cfg.solver.method}")
    try:
        res, _ = est.solve(beta, pose)
    except SolverError as exc:
        write_trace_csv(exc.trace, stem + "_trace.csv")
        raise
    save_groom(groom, stem + ".qfgr", res.positions)
    save_groom(groom, stem + ".json", res.positions)
    write_trace_csv(res.trace, stem + "_trace.csv")
    write_metrics_csv([res.metrics.replace(pose="scene")], stem + "_metrics.csv")
    m = res.metrics
    print(f"{cfg.solver.method}: {res.n_iter} iterations, {res.duration:.3f} s, energy {res.final_energy:.9g}, "
          f"converged={res.converged}")
    print(f"intersection {m.body_intersection_pct:.3f}%  length {m.length_preservation:.6g}  "
          f"orientation {m.orientation_preservation:.6g}  gravity {m.gravity_potential:.6g}")
    return EXIT_OK


def _sampler(cfg, body):
    from .io import load_pose_sequence
    from .neural import PoseSampler

    seq = load_pose_sequence(cfg.poses, body.n_joints) if cfg.poses else None
    s = cfg.sampler
    return PoseSampler(body, n_frames=cfg.material.n_pose_reg, joints=s.joints, max_angle=s.max_angle,
                       max_delta=s.max_delta, shape_range=s.shape_range, sequence=seq)


def cmd_train(cfg, resume=None):
    from .config import resolve_body
    from .neural import train_decoder

    cfg.validate(("grooms", "body"))
    if resume is not None and not os.path.exists(resume if resume.endswith(".json") else resume + ".json"):
        raise ValidationError(f"checkpoint {resume} not found")
    if cfg.body is None:
        raise ValidationError("training needs a body")
    body = resolve_body(cfg.body)
    grooms = _grooms(cfg, body)
    sampler = _sampler(cfg, body)
    os.makedirs(cfg.out, exist_ok=True)
    ckpt_dir = os.path.join(cfg.out, "checkpoints")
    log_path = os.path.join(cfg.out, "train_log.csv")
    try:
        res = train_decoder(grooms, body, sampler, cfg.material, cfg.training, resume_from=resume,
                            checkpoint_dir=ckpt_dir, log_path=log_path)
    except TrainingError as exc:
        print(f"training aborted: {exc}; sample dumped to {os.path.join(ckpt_dir, 'nan_sample.json')}",
              file=sys.stderr)
        return EXIT_FAILURE
    L = res.losses
    if len(L):
        print(f"trained {res.state.step} steps: loss {L[0]:.6g} -> {L[-1]:.6g}")
    print(f"checkpoint {os.path.join(ckpt_dir, 'final.json')}")
    return EXIT_OK


def _model(cfg):
    from .config import resolve_body
    from .neural import DrapeModel, check_checkpoint, load_checkpoint

    cfg.validate(("grooms", "body", "checkpoint"))
    body = resolve_body(cfg.body)
    grooms = _grooms(cfg, body)
    decoder, embedding, _, manifest = load_checkpoint(cfg.checkpoint)
    check_checkpoint(manifest, grooms, body)
    return DrapeModel(decoder, embedding, grooms, body), body


def cmd_infer(cfg):
    from .io import load_pose_sequence, save_groom
    from .neural import infer_drape

    model, body = _model(cfg)
    gi = cfg.groom_index
    groom = model.grooms[gi] if 0 <= gi < len(model.grooms) else None
    if groom is None:
        raise ValidationError(f"groom_index {gi} out of range")
    beta, pose = _scene(cfg, body)
    poses = load_pose_sequence(cfg.poses, body.n_joints) if cfg.poses else [pose]
    frames_dir = os.path.join(cfg.out, "drapes")
    os.makedirs(frames_dir, exist_ok=True)
    rows = []
    for k, p in enumerate(poses):
        r = infer_drape(model, gi, beta, p)
        save_groom(groom, os.path.join(frames_dir, f"frame_{k:05d}.qfgr"), r.x_hair)
        rows.append((k, r.seconds))
    with open(os.path.join(cfg.out, "timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "seconds"])
        for k, s in rows:
            w.writerow([k, repr(float(s))])
    mean_ms = 1000 * float(np.mean([s for _, s in rows]))
    print(f"{len(rows)} frames written to {frames_dir}; mean {mean_ms:.3f} ms per drape")
    return EXIT_OK


def cmd_gradcheck(cfg, n_configs=100, corrupt=None):
    from .gradcheck import run_gradcheck

    start = time.perf_counter()
    results = run_gradcheck(cfg.material, n_configs=n_configs, seed=cfg.seed, corrupt=corrupt)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:20s} max rel err {r.max_error:.3e} "
              f"({r.n_configs} configs, tol {r.tolerance:g})")
    print(f"{len(results) - len(failed)}/{len(results)} terms passed in {time.perf_counter() - start:.1f} s")
    if failed:
        print("failed terms: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_metrics(cfg):
    from .config import resolve_body
    from .evaluate import compute_metrics, write_metrics_csv
    from .io import load_groom

    cfg.validate(("grooms", "body", "drapes"))
    body = resolve_body(cfg.body)
    grooms = _grooms(cfg, body)
    groom = grooms[cfg.groom_index]
    body = _groom_body(groom, body)
    beta, pose = _scene(cfg, body)
    posed_body, x_posed = None, None
    if body is not None:
        from .kinematics import GroomPoser, skin_body

        posed_body = skin_body(body, beta, pose)
        x_posed = GroomPoser(groom, body)(beta, pose)
    records = []
    for path in cfg.drapes:
        drape = load_groom(path)
        if drape.positions.shape != groom.positions.shape:
            raise ValidationError(f"{path}: drape {drape.positions.shape} does not match the rest groom "
                                  f"{groom.positions.shape}")
        records.append(compute_metrics(drape.positions, groom, posed_body, cfg.material, x_posed,
                                       method=os.path.basename(path), pose="scene"))
    os.makedirs(cfg.out, exist_ok=True)
    out = os.path.join(cfg.out, "metrics.csv")
    write_metrics_csv(records, out)
    for r in records:
        print(f"{r.method}: intersection {r.body_intersection_pct:.3f}%  length {r.length_preservation:.6g}  "
              f"orientation {r.orientation_preservation:.6g}  gravity {r.gravity_potential:.6g}")
    return EXIT_OK


def cmd_bench(cfg):
    from .evaluate import bench_scaling, write_bench_csv

    model, body = _model(cfg)
    sampler = _sampler(cfg, body)
    rng = np.random.default_rng(cfg.seed)
    n = max(cfg.bench.batch_sizes)
    items = [(int(rng.integers(len(model.grooms))), sampler.sample_beta(rng), sampler.sample_pose(rng))
             for _ in range(n)]
    res = bench_scaling(model.predict_batch, items, cfg.bench.batch_sizes, cfg.bench.warmup, cfg.bench.repeats)
    os.makedirs(cfg.out, exist_ok=True)
    write_bench_csv(res, os.path.join(cfg.out, "bench.csv"))
    for b, t, p in res.rows():
        print(f"batch {b:6d}: total {t:10.3f} ms  per item {p:8.4f} ms")
    print(f"linear fit R^2 {res.r2:.4f}")
    return EXIT_OK


def cmd_convert(args, cfg):
    from .io import convert_polylines, load_groom, save_groom

    if args.scalp is not None:
        groom = convert_polylines(args.input, args.scalp, name=os.path.splitext(os.path.basename(args.input))[0])
    else:
        if not os.path.exists(args.input):
            raise ValidationError(f"input {args.input} not found")
        groom = load_groom(args.input)
    out = args.out if args.out and os.path.splitext(args.out)[1] else os.path.join(cfg.out, groom.name + ".qfgr")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_groom(groom, out)
    print(f"wrote {groom.n_strands} strands x {groom.n_vertices} vertices to {out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--iters", type=int, help="iterations (solver), steps (train), or configs per term (gradcheck)")
    common.add_argument("--seed", type=int, help="random seed (default 42)")
    common.add_argument("--threads", type=int, help=f"worker cap (fallback: ${THREADS_ENV})")
    common.add_argument("--out", help="output directory (or file for convert)")
    common.add_argument("--deterministic", action="store_true", help="sequential reductions, single BLAS thread")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="quaffure", description="Quasi-static hair draping toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("drape", parents=[common], help="solve one equilibrium drape")
    p.add_argument("--solver", choices=("adam", "lbfgs", "xpbd"))
    p = sub.add_parser("train", parents=[common], help="train the neural decoder")
    p.add_argument("--resume", help="checkpoint to resume from")
    sub.add_parser("infer", parents=[common], help="predict drapes with a checkpoint")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    sub.add_parser("metrics", parents=[common], help="metrics of drape files")
    sub.add_parser("bench", parents=[common], help="inference batch-scaling benchmark")
    p = sub.add_parser("convert", parents=[common], help="convert strand data to the groom format")
    p.add_argument("input", help="groom file, or polyline soup when --scalp is given")
    p.add_argument("--scalp", help="scalp mesh (OBJ) for polyline conversion")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        with _limit_threads(cfg.threads):
            if args.command == "drape":
                return cmd_drape(cfg)
            if args.command == "train":
                return cmd_train(cfg, args.resume)
            if args.command == "infer":
                return cmd_infer(cfg)
            if args.command == "gradcheck":
                return cmd_gradcheck(cfg, args.iters or 100, args.corrupt)
            if args.command == "metrics":
                return cmd_metrics(cfg)
            if args.command == "bench":
                return cmd_bench(cfg)
            return cmd_convert(args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuaffureError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
