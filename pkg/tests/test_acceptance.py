"""Acceptance criteria.  Each test prints one ``criterion N PASS/FAIL`` line;
the lines are repeated in the terminal summary."""
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quaffure.cli import main
from quaffure.evaluate import bench_scaling, compute_metrics, intersection_pct
from quaffure.fixtures import demo_groom, hanging_strand, helix_groom, two_bundles
from quaffure.gradcheck import run_gradcheck
from quaffure.kinematics import GroomPoser, PoseParams, build_root_frames, pose_groom, skin_body
from quaffure.neural import DrapeModel, PoseSampler, TrainConfig, infer_batch, infer_drape, train_decoder
from quaffure.potentials import MaterialParams
from quaffure.potentials.contact import density_exceedance, kernel_branches, sph_kernel
from quaffure.potentials.total import EnergyContext, total_energy
from quaffure.solvers import SolveConfig, solve_equilibrium

HANGING = dict(
    adam=SolveConfig(method="adam", max_iter=40000, lr=2e-3, lr_final=1e-6, beta1=0.99, beta2=0.99, gtol=0),
    lbfgs=SolveConfig(method="lbfgs", gtol=1e-10),
    xpbd=SolveConfig(method="xpbd", xpbd_steps=100, xpbd_iters=3000, dt=0.05),
)
# an in-range pose (every component within 30 degrees) that pushes hair into the shoulders
COLLISION_POSE = np.array([0.0, 0.0, 0.0, 0.18, 0.2, -0.35, -0.5, -0.45, 0.48])
HELD_OUT_SEED = 12345
N_HELD_OUT = 6


def test_criterion_01_gradient_suite(criterion):
    start = time.perf_counter()
    checks = run_gradcheck(n_configs=100, tolerance=1e-5, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(checks, key=lambda c: c.max_error)
    ok = all(c.passed and c.n_configs >= 100 for c in checks) and elapsed < 60.0
    detail = (f"{len(checks)} terms x 100 configs, worst {worst.name} {worst.max_error:.2e} (tol 1e-5), "
              f"{elapsed:.1f} s (limit 60 s)")
    assert criterion(1, "gradient suite", ok, detail)


def test_criterion_02_kernel_exactness(criterion):
    errors = []
    for h in (0.004, 0.5, 1.0, 3.0):
        inner, outer = kernel_branches(h, h)["inner"], kernel_branches(h, h)["outer"]
        errors += [
            abs(sph_kernel(0.0, h) - 4.0),
            abs(inner[0] - 1.0), abs(outer[0] - 1.0), abs(sph_kernel(h, h) - 1.0),
            abs(sph_kernel(2 * h, h) - 0.0),
            abs(inner[1] + 3.0 / h), abs(outer[1] + 3.0 / h),
        ]
    worst = max(errors)
    assert criterion(2, "kernel exactness", worst <= 1e-12, f"max deviation {worst:.1e} over 4 smoothing lengths (tol 1e-12)")


def test_criterion_03_rigid_transport(criterion, body, groom20):
    rng = np.random.default_rng(3)
    V, T = body.rest_vertices, body.triangles
    rest = build_root_frames(groom20, V, T)
    x0 = groom20.positions
    d0 = np.linalg.norm(x0[:, :, None] - x0[:, None], axis=-1)
    worst = 0.0
    for R in Rotation.random(1000, random_state=rng).as_matrix():
        t = rng.uniform(-2.0, 2.0, 3)
        posed = build_root_frames(groom20, V @ R.T + t, T)
        x = pose_groom(groom20, rest, posed)
        d = np.linalg.norm(x[:, :, None] - x[:, None], axis=-1)
        worst = max(worst, float(np.abs(d - d0).max()))
    assert criterion(3, "rigid transport", worst <= 1e-9, f"1000 motions, max distance change {worst:.2e} m (tol 1e-9)")


def test_criterion_04_hanging_strand(criterion):
    g = hanging_strand()
    mat = MaterialParams(k_cosserat=0.0)
    ctx = EnergyContext.from_posed(g, g.positions, mat, None, terms=("stretch", "gravity"))
    down = np.array([0.0, -1.0, 0.0])
    out, parts, ok = {}, [], True
    for method, cfg in HANGING.items():
        r = solve_equilibrium(g.positions, ctx, mat, cfg)
        e = np.diff(r.positions[0], axis=0)
        lengths = np.linalg.norm(e, axis=1)
        angle = np.degrees(np.arccos(np.clip((e / lengths[:, None]) @ down, -1, 1))).max()
        stretch = np.abs(lengths / g.rest_lengths[0] - 1).max()
        ok &= angle <= 0.5 and stretch <= 5e-3 and r.duration < 10.0
        out[method] = r.positions
        parts.append(f"{method} {angle:.3f} deg/{100 * stretch:.3f}%/{r.duration:.1f}s")
    pts = np.concatenate([g.positions.reshape(-1, 3)] + [x.reshape(-1, 3) for x in out.values()])
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    names = list(out)
    gap = max(np.linalg.norm(out[a] - out[b], axis=-1).max() for i, a in enumerate(names) for b in names[i + 1:])
    ok &= gap <= 0.02 * diag
    detail = "; ".join(parts) + f"; max pairwise gap {100 * gap / diag:.4f}% of diagonal (tol 2%)"
    assert criterion(4, "hanging strand", ok, detail)


def test_criterion_05_curliness(criterion):
    g = helix_groom()
    base = MaterialParams.guide_hair()

    def orientation(mat):
        ctx = EnergyContext.from_posed(g, g.positions, mat, None)
        r = solve_equilibrium(g.positions, ctx, mat, SolveConfig(max_iter=3000))
        return compute_metrics(r.positions, g, None, mat).orientation_preservation

    sweep = [1e-3, 1e-2, 1e-1]
    values = [orientation(base.replace(k_cosserat=k)) for k in sweep]
    spring = orientation(base.replace(elastic="mass_spring"))
    ok = values[-1] < spring and all(b <= a for a, b in zip(values, values[1:]))
    detail = (f"mass-spring {spring:.4g} vs Cosserat(k={sweep[-1]:g}) {values[-1]:.4g}; sweep "
              + ", ".join(f"k={k:g}: {v:.4g}" for k, v in zip(sweep, values)))
    assert criterion(5, "curliness ablation", ok, detail)


def test_criterion_06_collisions(criterion, body, groom20):
    mat = MaterialParams.guide_hair()
    pose = PoseParams.from_vector(COLLISION_POSE, body.n_joints)
    posed = skin_body(body, None, pose)
    xp = GroomPoser(groom20, body)(None, pose)
    ctx = EnergyContext.from_posed(groom20, xp, mat, posed)
    r = solve_equilibrium(xp, ctx, mat, SolveConfig(method="lbfgs", max_iter=2000))
    before, after = intersection_pct(xp, posed), intersection_pct(r.positions, posed)

    bundles, x_init = two_bundles()
    bctx = EnergyContext.from_posed(bundles, bundles.positions, mat, None)
    rho = bctx.rest_density
    e0 = float(density_exceedance(x_init, mat.vertex_mass, mat.smoothing_length, rho).sum())
    rb = solve_equilibrium(x_init, bctx, mat, SolveConfig(method="lbfgs", max_iter=2000))
    e1 = float(density_exceedance(rb.positions, mat.vertex_mass, mat.smoothing_length, rho).sum())
    reduction = 1.0 - e1 / e0
    ok = after <= 0.5 and reduction >= 0.9
    detail = (f"body intersection {before:.2f}% -> {after:.2f}% (tol 0.5%); "
              f"bundle exceedance {e0:.3g} -> {e1:.3g}, reduced {100 * reduction:.1f}% (need 90%)")
    assert criterion(6, "collision resolution", ok, detail)


@pytest.fixture(scope="module")
def trained(body):
    """Two seed-matched decoder runs that differ only in the pose regularizer."""
    grooms = [demo_groom(body, 20, seed=0, name="straight"), demo_groom(body, 20, style="wavy", seed=1, name="wavy")]
    config = TrainConfig(checkpoint_every=0)
    runs = {}
    for label, k_pr in (("pr", MaterialParams.guide_hair().k_pr), ("no_pr", 0.0)):
        mat = MaterialParams.guide_hair(k_pr=k_pr)
        sampler = PoseSampler(body, n_frames=mat.n_pose_reg)
        start = time.perf_counter()
        res = train_decoder(grooms, body, sampler, mat, config)
        runs[label] = (res, time.perf_counter() - start)
    return grooms, runs


@pytest.fixture(scope="module")
def held_out(body, trained):
    """Held-out in-range instances: decoder prediction versus a per-pose L-BFGS solve."""
    grooms, runs = trained
    res, _ = runs["pr"]
    mat = MaterialParams.guide_hair()
    model = DrapeModel(res.decoder, res.embedding, grooms, body)
    sampler = PoseSampler(body)
    rng = np.random.default_rng(HELD_OUT_SEED)
    rows = []
    for k in range(N_HELD_OUT):
        gi = k % 2
        beta, pose = sampler.sample_beta(rng), sampler.sample_pose(rng)
        pred = infer_drape(model, gi, beta, pose)
        seconds = min(infer_drape(model, gi, beta, pose).seconds for _ in range(5))
        posed = skin_body(body, beta, pose)
        ctx = EnergyContext.from_posed(grooms[gi], pred.x_posed, mat, posed)
        e_pred = total_energy(pred.x_hair, mat, ctx).total
        sol = solve_equilibrium(pred.x_posed, ctx, mat, SolveConfig(method="lbfgs", max_iter=2000))
        rows.append(dict(groom=gi, rel=(e_pred - sol.final_energy) / abs(sol.final_energy),
                         ipct=intersection_pct(pred.x_hair, posed), speedup=sol.duration / seconds))
    return model, rows


def test_criterion_07_self_supervised_training(criterion, trained, held_out):
    _, runs = trained
    res, seconds = runs["pr"]
    L = res.losses
    # single-window losses are noisy, so the final loss is the median of the last 50 steps
    reduction = 1.0 - float(np.median(L[-50:])) / L[0]
    _, rows = held_out
    rel = np.array([r["rel"] for r in rows])
    ipct = max(r["ipct"] for r in rows)
    ok = seconds <= 1800 and reduction >= 0.9 and rel.mean() <= 0.15 and ipct <= 2.0
    detail = (f"{len(L)} steps in {seconds / 60:.1f} min (limit 30), loss {L[0]:.3g} -> {np.median(L[-50:]):.3g} "
              f"({100 * reduction:.1f}% reduction, need 90%); held-out energy gap to L-BFGS mean "
              f"{100 * rel.mean():.1f}% (tol 15%, per pose " + ", ".join(f"{100 * v:.1f}" for v in rel)
              + f"); max intersection {ipct:.2f}% (tol 2%)")
    assert criterion(7, "self-supervised training", ok, detail)


def test_criterion_08_speed(criterion, body, held_out):
    model, rows = held_out
    speedups = np.array([r["speedup"] for r in rows])
    sampler = PoseSampler(body)
    rng = np.random.default_rng(8)
    items = [(int(rng.integers(2)), sampler.sample_beta(rng), sampler.sample_pose(rng)) for _ in range(1000)]
    bench = bench_scaling(model.predict_batch, items, (1, 10, 100, 1000), warmup=2, repeats=5)
    ok = speedups.min() >= 100 and bench.r2 >= 0.95
    detail = (f"decoder vs L-BFGS speedup min {speedups.min():.0f}x median {np.median(speedups):.0f}x (need 100x); "
              f"batch totals " + ", ".join(f"{b}: {t:.1f} ms" for b, t in zip(bench.batch_sizes, bench.total_ms))
              + f", linear R^2 {bench.r2:.4f} (need 0.95)")
    assert criterion(8, "speed ordering", ok, detail)


def test_criterion_09_pose_regularizer(criterion, body, trained):
    grooms, runs = trained
    sampler = PoseSampler(body)
    sweep = sampler.sweep(np.deg2rad([-20.0, -20.0, -10.0]), np.deg2rad([20.0, 20.0, 10.0]), 60)
    deform, total = {}, {}
    for label, (res, _) in runs.items():
        model = DrapeModel(res.decoder, res.embedding, grooms, body)
        d, t = [], []
        for gi in range(len(grooms)):
            r = infer_batch(model, [(gi, sweep.beta, p) for p in sweep.poses])
            # the regularizer acts on the predicted deformation; the rigid posing motion is shared by both models
            d.append(np.linalg.norm(np.diff(r.x_hair - r.x_posed, axis=0), axis=-1).mean())
            t.append(np.linalg.norm(np.diff(r.x_hair, axis=0), axis=-1).mean())
        deform[label], total[label] = float(np.mean(d)), float(np.mean(t))
    k_pr = MaterialParams.guide_hair().k_pr
    ok = deform["pr"] < deform["no_pr"]
    detail = (f"mean frame-to-frame deformation displacement k_pr={k_pr:g} {1e3 * deform['pr']:.5f} mm vs "
              f"k_pr=0 {1e3 * deform['no_pr']:.5f} mm over 60 frames "
              f"(total vertex motion {1e3 * total['pr']:.5f} vs {1e3 * total['no_pr']:.5f} mm)")
    assert criterion(9, "pose regularizer", ok, detail)


def test_criterion_10_determinism(criterion, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("""
[paths]
grooms = fixture:straight:3:0, fixture:wavy:3:1
[training]
hidden = 16 16
latent_dim = 4
checkpoint_every = 0
[solver]
max_iter = 100
""")
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes = [
            main(["drape", "--config", str(cfg), "--deterministic", "--out", str(out / "drape")]),
            main(["train", "--config", str(cfg), "--deterministic", "--iters", "20", "--out", str(out / "train")]),
        ]
        ckpt = out / "train" / "checkpoints" / "final"
        infer_cfg = tmp_path / f"infer{k}.ini"
        infer_cfg.write_text(cfg.read_text().replace("[paths]\n", f"[paths]\ncheckpoint = {ckpt}\n"))
        codes.append(main(["infer", "--config", str(infer_cfg), "--deterministic", "--out", str(out / "infer")]))
        assert codes == [0, 0, 0]
        files = sorted(p for p in out.rglob("*") if p.suffix in (".qfgr", ".bin"))
        outputs.append({str(p.relative_to(out)): p.read_bytes() for p in files})
    same = outputs[0].keys() == outputs[1].keys() and all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    detail = f"{len(outputs[0])} binary outputs from drape/train/infer compared byte for byte"
    assert criterion(10, "determinism", same and len(outputs[0]) >= 3, detail)
