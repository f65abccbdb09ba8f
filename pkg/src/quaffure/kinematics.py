"""Skinned body posing and the rigid, per-strand groom transformation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryError, ShapeError, ValidationError
from .groom import Groom, TextureLayout, texture_decode


def axis_angle_to_matrix(rotvec):
    """Rodrigues' formula for ``(..., 3)`` rotation vectors."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(rotvec, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    k = rotvec / safe[..., None]
    K = np.zeros(rotvec.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -k[..., 2], k[..., 1]
    K[..., 1, 0], K[..., 1, 2] = k[..., 2], -k[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -k[..., 1], k[..., 0]
    s = np.where(small, 0.0, np.sin(theta))[..., None, None]
    c = np.where(small, 0.0, 1.0 - np.cos(theta))[..., None, None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + c * (K @ K)


@dataclass(frozen=True)
class PoseParams:
    """Per-joint axis-angle rotations (radians) plus a root translation (meters)."""

    rotations: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tr))):
            raise ValidationError("pose parameters must be finite")
        if np.any(np.linalg.norm(rot, axis=1) >= 2 * np.pi):
            raise ValidationError("joint rotation magnitudes must be below 2*pi")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def zeros(cls, n_joints):
        return cls(np.zeros((n_joints, 3)))

    @classmethod
    def from_vector(cls, vec, n_joints):
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size == 3 * n_joints:
            return cls(vec.reshape(n_joints, 3))
        if vec.size == 3 * n_joints + 3:
            return cls(vec[:-3].reshape(n_joints, 3), vec[-3:])
        raise ShapeError(f"pose vector of size {vec.size} does not match {n_joints} joints")

    def to_vector(self):
        return np.concatenate([self.rotations.ravel(), self.translation])

    @property
    def n_joints(self):
        return len(self.rotations)


@dataclass(frozen=True)
class ShapeParams:
    coefficients: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if not np.all(np.isfinite(beta)):
            raise ValidationError("shape coefficients must be finite")
        object.__setattr__(self, "coefficients", beta)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))


def _as_shape(beta, n):
    if beta is None:
        return np.zeros(n)
    if isinstance(beta, ShapeParams):
        beta = beta.coefficients
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size != n:
        raise ShapeError(f"expected {n} shape coefficients, got {beta.size}")
    if not np.all(np.isfinite(beta)):
        raise ValidationError("shape coefficients must be finite")
    return beta


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Skinned triangle mesh.

    ``joint_positions`` and ``joint_orientations`` (axis-angle, world frame)
    describe the bind pose; ``skin_weights`` is dense ``(V, J)``.
    ``scalp_triangles`` lists triangles strands may attach to.
    """

    rest_vertices: np.ndarray
    triangles: np.ndarray
    parents: np.ndarray
    joint_positions: np.ndarray
    skin_weights: np.ndarray
    shape_blendshapes: np.ndarray
    joint_orientations: Optional[np.ndarray] = None
    joint_names: tuple = ()
    scalp_triangles: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.rest_vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        parents = np.asarray(self.parents, dtype=np.int64)
        J = len(parents)
        w = np.asarray(self.skin_weights, dtype=np.float64)
        bs = np.asarray(self.shape_blendshapes, dtype=np.float64).reshape(-1, len(v), 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeError("rest_vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3 or (t.size and (t.min() < 0 or t.max() >= len(v))):
            raise ShapeError("triangles must be (F, 3) valid vertex indices")
        if w.shape != (len(v), J):
            raise ShapeError(f"skin_weights must be ({len(v)}, {J})")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationError("skin weights must be non-negative and sum to 1")
        for j, p in enumerate(parents):
            if p >= j:
                raise ValidationError("joint parents must precede their children")
        orient = self.joint_orientations
        orient = np.zeros((J, 3)) if orient is None else np.asarray(orient, dtype=np.float64).reshape(J, 3)
        scalp = self.scalp_triangles
        scalp = np.arange(len(t)) if scalp is None else np.asarray(scalp, dtype=np.int64)
        names = tuple(self.joint_names) or tuple(f"joint{j}" for j in range(J))
        object.__setattr__(self, "rest_vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "joint_positions", np.asarray(self.joint_positions, dtype=np.float64).reshape(J, 3))
        object.__setattr__(self, "joint_orientations", orient)
        object.__setattr__(self, "skin_weights", w)
        object.__setattr__(self, "shape_blendshapes", bs)
        object.__setattr__(self, "scalp_triangles", scalp)
        object.__setattr__(self, "joint_names", names)

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def pose_dim(self):
        """Length of the flattened pose vector (rotations plus root translation)."""
        return 3 * self.n_joints + 3

    @property
    def shape_dim(self):
        return self.shape_blendshapes.shape[0]


@dataclass
class PosedBody:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray

    _bvh: object = field(default=None, repr=False)

    @property
    def bvh(self):
        if self._bvh is None:
            from .spatial import TriangleBVH

            self._bvh = TriangleBVH(self.vertices, self.triangles)
        return self._bvh


def joint_transforms(body: BodyModel, pose: PoseParams):
    """Per-joint skinning transforms ``(R, t)`` mapping bind space to posed space."""
    if pose.n_joints != body.n_joints:
        raise ShapeError(f"pose has {pose.n_joints} joints, body has {body.n_joints}")
    A_R, A_t = _joint_transforms(body, pose.rotations[None], pose.translation[None])
    return A_R[0], A_t[0]


def _joint_transforms(body: BodyModel, rotations, translations):
    """Batched :func:`joint_transforms` for ``(B, J, 3)`` rotations and ``(B, 3)`` translations."""
    J = body.n_joints
    B = len(rotations)
    R_bind = axis_angle_to_matrix(body.joint_orientations)
    R_local = axis_angle_to_matrix(rotations)
    G_R = np.zeros((B, J, 3, 3))
    G_t = np.zeros((B, J, 3))
    for j in range(J):
        p = body.parents[j]
        if p < 0:
            G_R[:, j] = R_bind[j] @ R_local[:, j]
            G_t[:, j] = body.joint_positions[j] + translations
        else:
            # bind-space offset of j relative to its parent, re-applied under the posed parent
            rel_R = R_bind[p].T @ R_bind[j]
            rel_t = R_bind[p].T @ (body.joint_positions[j] - body.joint_positions[p])
            G_R[:, j] = G_R[:, p] @ rel_R @ R_local[:, j]
            G_t[:, j] = G_R[:, p] @ rel_t + G_t[:, p]
    # A_j = G_j * G_bind_j^{-1}
    A_R = G_R @ np.transpose(R_bind, (0, 2, 1))
    A_t = G_t - np.einsum("xjab,jb->xja", A_R, body.joint_positions)
    return A_R, A_t


def shaped_vertices(body: BodyModel, beta=None, vertex_ids=None):
    beta = _as_shape(beta, body.shape_dim)
    v = body.rest_vertices if vertex_ids is None else body.rest_vertices[vertex_ids]
    if body.shape_dim:
        bs = body.shape_blendshapes if vertex_ids is None else body.shape_blendshapes[:, vertex_ids]
        v = v + np.einsum("s,svk->vk", beta, bs)
    return v


def skin_vertices(body: BodyModel, beta=None, pose: Optional[PoseParams] = None, vertex_ids=None):
    """Linear blend skinning of (a subset of) the body vertices."""
    if pose is None:
        return np.array(shaped_vertices(body, beta, vertex_ids), copy=True)
    return skin_vertices_batch(body, [beta], [pose], vertex_ids)[0]


def skin_vertices_batch(body: BodyModel, betas, poses, vertex_ids=None):
    """Skinned vertices ``(B, V, 3)`` for paired lists of shapes and poses (``None`` means rest)."""
    poses = [PoseParams.zeros(body.n_joints) if p is None else p for p in poses]
    for p in poses:
        if p.n_joints != body.n_joints:
            raise ShapeError(f"pose has {p.n_joints} joints, body has {body.n_joints}")
    v = np.stack([shaped_vertices(body, b, vertex_ids) for b in betas])
    A_R, A_t = _joint_transforms(body, np.stack([p.rotations for p in poses]),
                                 np.stack([p.translation for p in poses]))
    w = body.skin_weights if vertex_ids is None else body.skin_weights[vertex_ids]
    # blend displacements, not positions, so the identity pose reproduces v exactly
    delta = np.einsum("xjab,xvb->xjva", A_R - np.eye(3), v) + A_t[:, :, None, :]
    return v + np.einsum("vj,xjva->xva", w, delta)


def skin_body(body: BodyModel, beta=None, pose: Optional[PoseParams] = None, bvh_template=None) -> PosedBody:
    """Shape then pose the body; returns vertices and unit face normals.

    With ``bvh_template`` (a BVH of the same mesh) the posed BVH is refitted
    from it instead of being rebuilt.
    """
    from .spatial import triangle_normals

    if pose is not None and not isinstance(pose, PoseParams):
        pose = PoseParams.from_vector(pose, body.n_joints)
    verts = skin_vertices(body, beta, pose)
    posed = PosedBody(verts, body.triangles, triangle_normals(verts, body.triangles))
    if bvh_template is not None:
        posed._bvh = bvh_template.refit(verts)
    return posed


@dataclass(frozen=True)
class RootFrame:
    """Per-strand orthonormal bases (columns e1, e2, n) and origins."""

    basis: np.ndarray
    origin: np.ndarray

    def to_local(self, positions):
        return np.einsum("sba,snb->sna", self.basis, positions - self.origin[:, None, :])

    def to_world(self, local):
        return np.einsum("sab,snb->sna", self.basis, local) + self.origin[:, None, :]


def frames_from_triangles(a, b, c, barycentric):
    """Gram-Schmidt frames on edge ``b - a`` and the face normal."""
    e_ab = b - a
    n = np.cross(e_ab, c - a)
    area2 = np.linalg.norm(n, axis=1)
    if np.any(0.5 * area2 < 1e-12):
        raise GeometryError("degenerate attachment triangle (area < 1e-12)")
    n = n / area2[:, None]
    e1 = e_ab / np.linalg.norm(e_ab, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    basis = np.stack([e1, e2, n], axis=-1)
    origin = barycentric[:, 0:1] * a + barycentric[:, 1:2] * b + barycentric[:, 2:3] * c
    return RootFrame(basis, origin)


def build_root_frames(groom: Groom, vertices, triangles) -> RootFrame:
    """Frames on each strand's attachment triangle of the given mesh."""
    tri = groom.attachment_triangle
    triangles = np.asarray(triangles)
    if np.any(tri < 0) or np.any(tri >= len(triangles)):
        raise ValidationError("every strand needs a valid attachment triangle")
    v = np.asarray(vertices, dtype=np.float64)
    idx = triangles[tri]
    return frames_from_triangles(v[idx[:, 0]], v[idx[:, 1]], v[idx[:, 2]], groom.attachment_barycentric)


def pose_groom(groom: Groom, frames_rest: RootFrame, frames_posed: RootFrame):
    """Carry every strand rigidly with its root frame; returns ``x_posed``."""
    if len(frames_rest.origin) != groom.n_strands or len(frames_posed.origin) != groom.n_strands:
        raise ShapeError("one root frame per strand is required")
    return frames_posed.to_world(frames_rest.to_local(groom.positions))


class GroomPoser:
    """Caches the rest embedding of a groom so posing only needs scalp vertices."""

    def __init__(self, groom: Groom, body: BodyModel):
        self.groom = groom
        self.body = body
        tri = body.triangles[groom.attachment_triangle]
        self.vertex_ids, inverse = np.unique(tri.ravel(), return_inverse=True)
        self._corner = inverse.reshape(-1, 3)
        rest = shaped_vertices(body, None, self.vertex_ids)
        self.frames_rest = self._frames(rest)
        self.local = self.frames_rest.to_local(groom.positions)

    def _frames(self, sub_vertices):
        c = self._corner
        return frames_from_triangles(
            sub_vertices[c[:, 0]], sub_vertices[c[:, 1]], sub_vertices[c[:, 2]],
            self.groom.attachment_barycentric,
        )

    def frames(self, beta=None, pose=None):
        if pose is not None and not isinstance(pose, PoseParams):
            pose = PoseParams.from_vector(pose, self.body.n_joints)
        return self._frames(skin_vertices(self.body, beta, pose, self.vertex_ids))

    def __call__(self, beta=None, pose=None):
        return self.batch([beta], [pose])[0]

    def batch(self, betas, poses):
        """Posed groom for many ``(beta, pose)`` pairs: ``(B, S, N, 3)``."""
        poses = [p if p is None or isinstance(p, PoseParams) else PoseParams.from_vector(p, self.body.n_joints)
                 for p in poses]
        if len(betas) != len(poses):
            raise ShapeError(f"{len(betas)} shape vectors for {len(poses)} poses")
        if not poses:
            return np.zeros((0,) + self.local.shape)
        v = skin_vertices_batch(self.body, betas, poses, self.vertex_ids)
        B, S = len(v), self.groom.n_strands
        c = self._corner
        bary = np.broadcast_to(self.groom.attachment_barycentric, (B, S, 3)).reshape(-1, 3)
        f = frames_from_triangles(v[:, c[:, 0]].reshape(-1, 3), v[:, c[:, 1]].reshape(-1, 3),
                                  v[:, c[:, 2]].reshape(-1, 3), bary)
        basis = f.basis.reshape(B, S, 3, 3)
        origin = f.origin.reshape(B, S, 3)
        return np.einsum("xsab,snb->xsna", basis, self.local) + origin[:, :, None, :]


def compose_drape(x_posed, deformation, layout: TextureLayout):
    """``x_hair = x_posed + x_deformation`` on the active texels."""
    x_posed = np.asarray(x_posed, dtype=np.float64)
    deformation = np.asarray(deformation, dtype=np.float64)
    if deformation.ndim == 4:
        deformation = texture_decode(deformation, layout)
    if deformation.shape != x_posed.shape:
        raise ShapeError(f"deformation {deformation.shape} does not match x_posed {x_posed.shape}")
    return x_posed + deformation
