"""Self-supervised training of the decoder through the physics loss."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import CheckpointError, ConfigError, TrainingError, ValidationError
from ..groom import Groom
from ..kinematics import BodyModel, GroomPoser, skin_body
from ..potentials import MaterialParams, pose_reg_energy
from ..potentials.total import EnergyContext, rest_density, total_energy
from ..spatial import TriangleBVH
from .decoder import DEFAULT_HIDDEN, DEFAULT_LATENT_DIM, DecoderNet, GroomEmbedding
from .sampler import PoseSampler

CHECKPOINT_FORMAT = "quaffure-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and architecture settings.

    The learning rate decays exponentially from ``lr`` to ``lr_final`` over
    ``steps``.  ``grad_clip`` caps the global gradient norm (0 disables).
    ``terms`` restricts the physics loss (None uses every enabled term).
    """

    steps: int = 8000
    lr: float = 1e-3
    lr_final: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 100.0
    latent_dim: int = DEFAULT_LATENT_DIM
    hidden: tuple = DEFAULT_HIDDEN
    output_scale: float = 0.05
    output_mode: str = "vertex"
    embedding_scale: float = 0.1
    windows_per_step: int = 1
    checkpoint_every: int = 500
    seed: int = 42
    terms: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(self.terms))
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not (self.lr > 0 and self.lr_final > 0):
            raise ConfigError("learning rates must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.latent_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ConfigError("latent_dim and hidden sizes must be >= 1")
        if self.windows_per_step < 1:
            raise ConfigError("windows_per_step must be >= 1")
        if self.output_scale <= 0 or self.grad_clip < 0 or self.checkpoint_every < 0:
            raise ConfigError("output_scale must be > 0; grad_clip and checkpoint_every >= 0")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["terms"] = None if self.terms is None else list(self.terms)
        return d

    def learning_rate(self, step):
        if self.steps <= 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** (step / (self.steps - 1))


@dataclass
class TrainState:
    """Flat trainable vector ``[network params, embedding table]`` and its
    Adam moments; ``history`` holds one dict per completed step."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    seed: int = 42
    history: List[dict] = field(default_factory=list)

    @property
    def losses(self):
        return np.array([row["total"] for row in self.history])


@dataclass
class TrainResult:
    decoder: DecoderNet
    embedding: GroomEmbedding
    state: TrainState
    grooms: Sequence[Groom]

    @property
    def history(self):
        return self.state.history

    @property
    def losses(self):
        return self.state.losses


class GroomScene:
    """Per-groom caches: posing, rest density, decoder columns."""

    def __init__(self, groom: Groom, body: BodyModel, material: MaterialParams, decoder: DecoderNet):
        self.groom = groom
        self.poser = GroomPoser(groom, body)
        self.rest_density = groom.rest_density if groom.rest_density is not None else rest_density(groom.positions, material)
        self.columns = decoder.columns(groom)


class PhysicsLoss:
    """Window loss: summed per-frame energy of ``x_posed + deformation`` plus
    the pose regularizer across the window."""

    def __init__(self, body: BodyModel, material: MaterialParams, terms=None):
        self.body = body
        self.material = material
        self.terms = terms
        self.bvh_template = TriangleBVH(body.rest_vertices, body.triangles)

    def frames(self, scene: GroomScene, beta, poses):
        """Posed grooms and energy contexts for every frame of a window."""
        out = []
        for pose in poses:
            posed = skin_body(self.body, beta, pose, bvh_template=self.bvh_template)
            xp = scene.poser(beta, pose)
            ctx = EnergyContext.from_posed(scene.groom, xp, self.material, posed, terms=self.terms,
                                           rest_density_values=scene.rest_density)
            out.append((xp, ctx))
        return out

    def __call__(self, frames, deformations):
        """``(loss, per-term sums, d loss / d deformations)``."""
        terms, grads = {}, []
        total = 0.0
        for (xp, ctx), d in zip(frames, deformations):
            r = total_energy(xp + d, self.material, ctx)
            total += r.total
            for k, e in r.terms.items():
                terms[k] = terms.get(k, 0.0) + e
            grads.append(r.gradient)
        grads = np.stack(grads)
        if len(deformations) >= 2 and self.material.k_pr > 0:
            e, g = pose_reg_energy(list(deformations), self.material.k_pr)
            terms["pose_reg"] = e
            total += e
            grads = grads + g
        return total, terms, grads


def _initial_state(decoder, embedding, seed):
    params = np.concatenate([decoder.net.params, embedding.table.ravel()])
    return TrainState(params, np.zeros_like(params), np.zeros_like(params), 0, seed, [])


def _bind(state, decoder, embedding):
    """Make the network parameters and embedding table views into ``state.params``."""
    n = decoder.net.n_params
    decoder.net.params = state.params[:n]
    embedding.table = state.params[n:].reshape(embedding.table.shape)


def _unpack(state, decoder, embedding):
    n = decoder.net.n_params
    decoder.net.params = state.params[:n].copy()
    embedding.table = state.params[n:].reshape(embedding.table.shape).copy()


def build_model(grooms, body: BodyModel, config: TrainConfig):
    """Fresh decoder and embedding, initialized from ``config.seed``."""
    rng = np.random.default_rng([config.seed, 0])
    decoder = DecoderNet.for_grooms(grooms, config.latent_dim, body.shape_dim, body.pose_dim,
                                    hidden=config.hidden, output_scale=config.output_scale,
                                    output_mode=config.output_mode, rng=rng)
    embedding = GroomEmbedding(len(grooms), config.latent_dim, rng=rng, scale=config.embedding_scale)
    return decoder, embedding


def _window_gradient(decoder, embedding, scene, gi, window, loss_fn, step):
    frames = loss_fn.frames(scene, window.beta, window.poses)
    X = decoder.inputs(embedding.table[gi], window.beta, window.pose_vectors)
    Y, acts = decoder.forward_raw(X, cache=True)
    D = Y[:, scene.columns]
    loss, terms, gD = loss_fn(frames, D)
    if not (np.isfinite(loss) and np.all(np.isfinite(gD))):
        raise TrainingError(
            f"non-finite loss at step {step}",
            {"step": step, "groom": gi, "groom_name": scene.groom.name, "beta": window.beta.tolist(),
             "poses": window.pose_vectors.tolist(), "terms": {k: float(v) for k, v in terms.items()}},
        )
    g_net, g_in = decoder.backward(acts, gD, scene.columns)
    return loss, terms, g_net, g_in[:, : decoder.latent_dim].sum(axis=0)


def train_step(state, step, decoder, embedding, scenes, sampler, loss_fn, config: TrainConfig):
    """One Adam step on ``config.windows_per_step`` sampled (groom, window)
    pairs; the loss is their mean.  Updates ``state`` in place and returns
    the history row (without wall time)."""
    rng = np.random.default_rng([config.seed, 1, step])
    _bind(state, decoder, embedding)
    n_net = decoder.net.n_params
    grad = np.zeros_like(state.params)
    g_emb = grad[n_net:].reshape(embedding.table.shape)
    total, terms, grooms = 0.0, {}, []
    W = config.windows_per_step
    for _ in range(W):
        gi = int(rng.integers(len(scenes)))
        window = sampler.sample_window(rng)
        loss, t, g_net, g_z = _window_gradient(decoder, embedding, scenes[gi], gi, window, loss_fn, step)
        total += loss / W
        for k, v in t.items():
            terms[k] = terms.get(k, 0.0) + v / W
        grad[:n_net] += g_net / W
        g_emb[gi] += g_z / W
        grooms.append(gi)
    norm = float(np.linalg.norm(grad))
    if config.grad_clip > 0 and norm > config.grad_clip:
        grad *= config.grad_clip / norm
    t = step + 1
    b1, b2 = config.beta1, config.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    grad *= grad
    state.v *= b2
    state.v += (1 - b2) * grad
    # grad is reused as scratch for the update direction
    np.sqrt(state.v, out=grad)
    grad *= 1.0 / np.sqrt(1 - b2 ** t)
    grad += config.eps
    np.divide(state.m, grad, out=grad)
    grad *= config.learning_rate(step) / (1 - b1 ** t)
    state.params -= grad
    state.step = t
    row = {"step": step, "total": float(total), "grad_norm": norm, "groom": grooms[0] if W == 1 else -1}
    row.update({k: float(v) for k, v in terms.items()})
    return row


def train_decoder(grooms, body: BodyModel, sampler: PoseSampler, material: MaterialParams,
                  config: TrainConfig = None, resume_from=None, checkpoint_dir=None, log_path=None,
                  callback=None) -> TrainResult:
    """Train decoder and embeddings on ``grooms`` until ``config.steps``.

    ``resume_from`` is a checkpoint path; the per-step random stream is keyed
    on ``(seed, step)`` so a resumed run reproduces an uninterrupted one.
    Checkpoints go to ``checkpoint_dir/step_XXXXXXX`` every
    ``config.checkpoint_every`` steps and at the end (``final``).  On a
    non-finite loss the offending sample is dumped to
    ``checkpoint_dir/nan_sample.json`` and :class:`TrainingError` is raised.
    """
    config = config or TrainConfig()
    grooms = list(grooms)
    if not grooms:
        raise ValidationError("training needs at least one groom")
    if sampler.n_joints != body.n_joints:
        raise ValidationError("sampler and body disagree on the joint count")
    if resume_from is not None:
        decoder, embedding, state, manifest = load_checkpoint(resume_from)
        check_checkpoint(manifest, grooms, body)
        if manifest.get("config") and TrainConfig(**_config_from_manifest(manifest)).seed != config.seed:
            raise CheckpointError("resuming with a different seed than the checkpoint")
    else:
        decoder, embedding = build_model(grooms, body, config)
        state = _initial_state(decoder, embedding, config.seed)
    scenes = [GroomScene(g, body, material, decoder) for g in grooms]
    loss_fn = PhysicsLoss(body, material, config.terms)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    start = time.perf_counter()
    offset = state.history[-1]["wall_time"] if state.history else 0.0
    log = _TrainLog(log_path, append=resume_from is not None and state.history)
    try:
        while state.step < config.steps:
            step = state.step
            try:
                row = train_step(state, step, decoder, embedding, scenes, sampler, loss_fn, config)
            except TrainingError as exc:
                if checkpoint_dir:
                    with open(os.path.join(checkpoint_dir, "nan_sample.json"), "w") as fh:
                        json.dump(exc.sample, fh, indent=1)
                raise
            row["wall_time"] = offset + time.perf_counter() - start
            state.history.append(row)
            log.write(row)
            if callback is not None:
                callback(row)
            if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                _unpack(state, decoder, embedding)
                save_checkpoint(os.path.join(checkpoint_dir, f"step_{state.step:07d}"), decoder, embedding,
                                state, config, grooms, material)
    finally:
        log.close()
    _unpack(state, decoder, embedding)
    if checkpoint_dir:
        save_checkpoint(os.path.join(checkpoint_dir, "final"), decoder, embedding, state, config, grooms, material)
    return TrainResult(decoder, embedding, state, grooms)


class _TrainLog:
    BASE = ("step", "total", "stretch", "cosserat", "mass_spring", "stretch_shear", "bend_twist",
            "unit_quaternion", "gravity", "body_collision", "self_collision", "pose_reg", "grad_norm",
            "groom", "wall_time")

    def __init__(self, path, append=False):
        self.fh = None
        if path:
            exists = append and os.path.exists(path)
            self.fh = open(path, "a" if exists else "w", newline="")
            self.writer = csv.DictWriter(self.fh, fieldnames=self.BASE, restval="")
            if not exists:
                self.writer.writeheader()

    def write(self, row):
        if self.fh is not None:
            self.writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})

    def close(self):
        if self.fh is not None:
            self.fh.close()


def read_train_log(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items() if v != ""} for row in csv.DictReader(fh)]


# -- checkpoints ---------------------------------------------------------------

def _paths(path):
    path = str(path)
    for ext in (".json", ".bin"):
        if path.endswith(ext):
            path = path[: -len(ext)]
    return path + ".json", path + ".bin"


def save_checkpoint(path, decoder: DecoderNet, embedding: GroomEmbedding, state: TrainState = None,
                    config: TrainConfig = None, grooms=(), material: MaterialParams = None):
    """Text manifest ``path.json`` plus little-endian f64 blob ``path.bin``."""
    manifest_path, blob_path = _paths(path)
    arrays = [("network", decoder.net.params), ("embedding", embedding.table)]
    if state is not None:
        arrays += [("adam_m", state.m), ("adam_v", state.v)]
    entries, offset = [], 0
    for name, arr in arrays:
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(decoder.net.sizes),
        "latent_dim": decoder.latent_dim,
        "shape_dim": decoder.shape_dim,
        "pose_dim": decoder.pose_dim,
        "n_vertices": decoder.n_vertices,
        "texture_resolution": decoder.texture_resolution,
        "output_scale": decoder.output_scale,
        "output_mode": decoder.output_mode,
        "texels": decoder.texels.tolist(),
        "n_grooms": embedding.n_grooms,
        "groom_names": [g.name for g in grooms],
        "groom_strands": [g.n_strands for g in grooms],
        "step": 0 if state is None else state.step,
        "seed": None if state is None else state.seed,
        "config": None if config is None else config.to_dict(),
        "material": None if material is None else material.to_dict(),
        "history": [] if state is None else state.history,
        "weights_file": os.path.basename(blob_path),
        "arrays": entries,
    }
    blob = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in arrays]).astype("<f8")
    with open(blob_path, "wb") as fh:
        fh.write(blob.tobytes())
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest_path


def load_checkpoint(path):
    """``(decoder, embedding, state, manifest)``; ``state`` is None for
    weight-only checkpoints."""
    manifest_path, blob_path = _paths(path)
    if not os.path.exists(manifest_path):
        raise CheckpointError(f"checkpoint manifest {manifest_path} not found")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"malformed checkpoint manifest: {exc}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("unsupported checkpoint format")
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest.get("weights_file", os.path.basename(blob_path)))
    if not os.path.exists(blob_path):
        raise CheckpointError(f"checkpoint weights {blob_path} not found")
    blob = np.fromfile(blob_path, dtype="<f8").astype(np.float64)
    arrays = {}
    for e in manifest["arrays"]:
        if e["offset"] + e["count"] > blob.size:
            raise CheckpointError("checkpoint weights are truncated")
        arrays[e["name"]] = blob[e["offset"]: e["offset"] + e["count"]].reshape(e["shape"])
    sizes = manifest["layer_sizes"]
    decoder = DecoderNet(manifest["latent_dim"], manifest["shape_dim"], manifest["pose_dim"], manifest["texels"],
                         manifest["n_vertices"], manifest["texture_resolution"], hidden=sizes[1:-1],
                         output_scale=manifest["output_scale"], output_mode=manifest.get("output_mode", "edge"),
                         params=arrays["network"])
    if tuple(decoder.net.sizes) != tuple(sizes):
        raise CheckpointError(f"layer sizes {sizes} inconsistent with the stored dimensions")
    embedding = GroomEmbedding(manifest["n_grooms"], manifest["latent_dim"], table=arrays["embedding"])
    state = None
    if "adam_m" in arrays:
        params = np.concatenate([decoder.net.params, embedding.table.ravel()])
        state = TrainState(params, arrays["adam_m"].copy(), arrays["adam_v"].copy(), int(manifest["step"]),
                           manifest.get("seed"), list(manifest.get("history", [])))
    return decoder, embedding, state, manifest


def check_checkpoint(manifest, grooms, body: BodyModel):
    """Raise :class:`CheckpointError` if the run disagrees with the checkpoint."""
    if manifest["pose_dim"] != body.pose_dim or manifest["shape_dim"] != body.shape_dim:
        raise CheckpointError(
            f"checkpoint expects pose/shape dims {manifest['pose_dim']}/{manifest['shape_dim']}, "
            f"body has {body.pose_dim}/{body.shape_dim}"
        )
    if len(grooms) > manifest["n_grooms"]:
        raise CheckpointError(f"checkpoint has {manifest['n_grooms']} embeddings, run has {len(grooms)} grooms")
    texels = {tuple(t) for t in manifest["texels"]}
    for g in grooms:
        if g.n_vertices != manifest["n_vertices"] or g.texture_resolution != manifest["texture_resolution"]:
            raise CheckpointError(f"groom {g.name!r} does not match the checkpoint vertex count or texture size")
        if not {tuple(t) for t in g.texel_of_strand.tolist()} <= texels:
            raise CheckpointError(f"groom {g.name!r} uses texels unknown to the checkpoint")


def _config_from_manifest(manifest):
    d = dict(manifest["config"])
    d["hidden"] = tuple(d["hidden"])
    return d


def zero_checkpoint(path, grooms, body: BodyModel, config: TrainConfig = None):
    """Weight-only checkpoint with every parameter zero (decodes to zero deformation)."""
    config = config or TrainConfig()
    decoder, embedding = build_model(grooms, body, config)
    decoder.net.params = np.zeros(decoder.net.n_params)
    embedding.table = np.zeros_like(embedding.table)
    return save_checkpoint(path, decoder, embedding, None, config, grooms)
