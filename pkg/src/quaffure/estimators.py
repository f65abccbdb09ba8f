"""scikit-learn style front ends for the solvers and the neural decoder."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ValidationError
from .evaluate import compute_metrics
from .kinematics import GroomPoser, PoseParams, skin_body
from .neural import DrapeModel, PoseSampler, TrainConfig, infer_batch, load_checkpoint, save_checkpoint, train_decoder
from .potentials import MaterialParams
from .potentials.total import EnergyContext, rest_density
from .solvers import SolveConfig, solve_equilibrium


def _material(material):
    if material is None:
        return MaterialParams.guide_hair()
    if isinstance(material, dict):
        return MaterialParams.guide_hair(**material)
    if not isinstance(material, MaterialParams):
        raise ValidationError("material must be MaterialParams, a dict of overrides, or None")
    return material


def _pose_list(poses, n_joints):
    if poses is None:
        return [None]
    if isinstance(poses, PoseParams):
        return [poses]
    out = []
    for p in poses:
        out.append(p if p is None or isinstance(p, PoseParams) else PoseParams.from_vector(p, n_joints))
    return out


def _beta_list(betas, n, shape_dim):
    if betas is None:
        return [np.zeros(shape_dim)] * n
    betas = np.asarray(betas, dtype=np.float64).reshape(-1, shape_dim)
    if len(betas) == 1:
        return [betas[0]] * n
    if len(betas) != n:
        raise ValidationError(f"{len(betas)} shape vectors for {n} poses")
    return list(betas)


class QuasiStaticDrape(BaseEstimator):
    """Per-pose equilibrium by direct energy minimization.

    ``fit(groom, body)`` binds the groom; ``predict(poses, betas)`` returns
    ``(B, S, N, 3)`` drapes and keeps per-pose metrics in ``metrics_``.
    Solver keys not listed here go in ``solver_options``.
    """

    def __init__(self, method="lbfgs", max_iter=2000, material=None, solver_options=None, pin_roots=True):
        self.method = method
        self.max_iter = max_iter
        self.material = material
        self.solver_options = solver_options
        self.pin_roots = pin_roots

    def fit(self, groom, body=None):
        self.material_ = _material(self.material)
        self.solve_config_ = SolveConfig(method=self.method, max_iter=self.max_iter, **(self.solver_options or {}))
        self.groom_ = groom
        self.body_ = body
        self.poser_ = None if body is None or np.any(groom.attachment_triangle < 0) else GroomPoser(groom, body)
        self.rest_density_ = rest_density(groom.positions, self.material_)
        self.n_features_in_ = groom.n_strands * groom.n_vertices * 3
        return self

    def posed(self, beta=None, pose=None):
        """Rigidly posed groom and posed body for one (shape, pose)."""
        check_is_fitted(self, "groom_")
        if self.poser_ is None:
            if pose is not None and np.any(pose.to_vector() != 0):
                raise ValidationError("posing needs a body and an attached groom")
            return np.array(self.groom_.positions), None if self.body_ is None else skin_body(self.body_, beta)
        return self.poser_(beta, pose), skin_body(self.body_, beta, pose)

    def solve(self, beta=None, pose=None, x_init=None):
        """Full :class:`EquilibriumResult` for one (shape, pose)."""
        xp, body = self.posed(beta, pose)
        ctx = EnergyContext.from_posed(self.groom_, xp, self.material_, body, self.pin_roots,
                                       rest_density_values=self.rest_density_)
        res = solve_equilibrium(xp if x_init is None else x_init, ctx, self.material_, self.solve_config_)
        res.metrics = compute_metrics(res.positions, self.groom_, body, self.material_, xp, res.duration,
                                      method=self.method)
        return res, xp

    def predict(self, poses=None, betas=None):
        check_is_fitted(self, "groom_")
        n_joints = self.body_.n_joints if self.body_ is not None else 0
        plist = _pose_list(poses, n_joints)
        shape_dim = self.body_.shape_dim if self.body_ is not None else 0
        blist = _beta_list(betas, len(plist), shape_dim) if shape_dim else [None] * len(plist)
        out, self.metrics_, self.results_ = [], [], []
        for beta, pose in zip(blist, plist):
            res, _ = self.solve(beta, pose)
            out.append(res.positions)
            self.metrics_.append(res.metrics)
            self.results_.append(res)
        return np.stack(out)


class NeuralDrape(BaseEstimator):
    """Self-supervised decoder over one or more grooms.

    ``fit(grooms, body)`` trains from the physics loss only;
    ``predict(items)`` takes ``(groom_index, beta, pose)`` triples and
    returns ``(B, S, N, 3)`` drapes (all items must share a strand count).
    """

    def __init__(self, steps=8000, lr=1e-3, lr_final=1e-5, hidden=(256, 256, 256), latent_dim=16,
                 output_scale=0.05, output_mode="vertex", grad_clip=100.0, material=None, joints=("neck",),
                 max_angle=30.0, max_delta=3.0, shape_range=0.5, seed=42, checkpoint_every=0):
        self.steps = steps
        self.lr = lr
        self.lr_final = lr_final
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.output_scale = output_scale
        self.output_mode = output_mode
        self.grad_clip = grad_clip
        self.material = material
        self.joints = joints
        self.max_angle = max_angle
        self.max_delta = max_delta
        self.shape_range = shape_range
        self.seed = seed
        self.checkpoint_every = checkpoint_every

    def train_config(self):
        return TrainConfig(
            steps=self.steps, lr=self.lr, lr_final=self.lr_final, hidden=tuple(self.hidden),
            latent_dim=self.latent_dim, output_scale=self.output_scale, output_mode=self.output_mode,
            grad_clip=self.grad_clip, seed=self.seed, checkpoint_every=self.checkpoint_every,
        )

    def sampler(self, body, n_frames):
        return PoseSampler(body, n_frames=n_frames, joints=self.joints, max_angle=self.max_angle,
                           max_delta=self.max_delta, shape_range=self.shape_range)

    def fit(self, grooms, body, checkpoint_dir=None, log_path=None, resume_from=None):
        material = _material(self.material)
        grooms = list(grooms)
        result = train_decoder(grooms, body, self.sampler(body, material.n_pose_reg), material, self.train_config(),
                               resume_from=resume_from, checkpoint_dir=checkpoint_dir, log_path=log_path)
        self.material_ = material
        self.history_ = result.history
        self.model_ = DrapeModel(result.decoder, result.embedding, grooms, body)
        return self

    @property
    def losses_(self):
        return np.array([r["total"] for r in self.history_])

    def predict(self, items):
        check_is_fitted(self, "model_")
        return infer_batch(self.model_, items).x_hair

    def save(self, path):
        check_is_fitted(self, "model_")
        m = self.model_
        return save_checkpoint(path, m.decoder, m.embedding, None, self.train_config(), m.grooms, self.material_)

    @classmethod
    def load(cls, path, grooms, body):
        decoder, embedding, state, manifest = load_checkpoint(path)
        cfg = manifest.get("config") or {}
        keys = set(cls().get_params())
        est = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items() if k in keys})
        est.material_ = MaterialParams.from_dict(manifest["material"]) if manifest.get("material") else _material(None)
        est.history_ = manifest.get("history", []) if state is None else state.history
        est.model_ = DrapeModel(decoder, embedding, grooms, body)
        return est
