"""Procedural articulated bodies with separable identity and pose.

A fixed ten-segment skeleton (torso, head, two-part arms and legs) is dressed
with one ellipsoid surface per segment and posed by linear-blend skinning:
vertices near a segment's proximal joint are blended with the parent bone.
Identity is a per-segment length/radius scale; pose is an Euler rotation per
joint.  Two rest layouts exist, upright biped and horizontal quadruped.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import Mesh, center_mesh, load_obj, permute_vertices, save_obj

SEGMENTS = ("torso", "head", "l_upper_arm", "l_lower_arm", "r_upper_arm", "r_lower_arm",
            "l_thigh", "l_shin", "r_thigh", "r_shin")
PARENT = (-1, 0, 0, 2, 0, 4, 0, 6, 0, 8)
JOINTS = SEGMENTS[1:]  # every non-root segment hangs from one joint
N_JOINTS = len(JOINTS)

# model units: the unit-identity biped stands about 1.0 tall at rest
BASE_LENGTH = np.array([0.346, 0.138, 0.176, 0.164, 0.176, 0.164, 0.264, 0.252, 0.264, 0.252])
# quadrupeds carry a longer trunk than the upright template
QUADRUPED_TORSO = 2.2
BASE_RADIUS = np.array([0.0943, 0.0629, 0.0283, 0.0252, 0.0283, 0.0252, 0.044, 0.0346, 0.044, 0.0346])

# per-joint Euler (xyz) limits in radians, rows follow JOINTS
JOINT_LIMITS = np.array([
    [[-0.4, 0.4], [-0.6, 0.6], [-0.3, 0.3]],   # neck
    [[-0.8, 0.8], [-0.6, 0.6], [-1.2, 1.0]],   # l shoulder
    [[0.0, 0.0], [-1.4, 0.0], [0.0, 0.0]],     # l elbow
    [[-0.8, 0.8], [-0.6, 0.6], [-1.0, 1.2]],   # r shoulder
    [[0.0, 0.0], [0.0, 1.4], [0.0, 0.0]],      # r elbow
    [[-1.0, 0.9], [-0.3, 0.3], [-0.5, 0.4]],   # l hip
    [[0.0, 1.5], [0.0, 0.0], [0.0, 0.0]],      # l knee
    [[-1.0, 0.9], [-0.3, 0.3], [-0.4, 0.5]],   # r hip
    [[0.0, 1.5], [0.0, 0.0], [0.0, 0.0]],      # r knee
])

SCALE_RANGE = (0.5, 2.0)
BLEND_ZONE = 0.3


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """Tessellation per segment class as (rings, vertices per ring)."""
    torso: tuple = (7, 8)
    head: tuple = (6, 9)
    limb: tuple = (4, 8)
    quadruped: bool = False

    def tessellation(self, segment):
        if segment == 0:
            return self.torso
        if segment == 1:
            return self.head
        return self.limb

    @property
    def n_vertices(self):
        return sum(r * k + 2 for r, k in map(self.tessellation, range(len(SEGMENTS))))


@dataclass(frozen=True)
class IdentityParams:
    lengths: tuple = (1.0,) * len(SEGMENTS)
    radii: tuple = (1.0,) * len(SEGMENTS)

    def validate(self):
        lo, hi = SCALE_RANGE
        for label, values in (("lengths", self.lengths), ("radii", self.radii)):
            v = np.asarray(values, dtype=np.float64)
            if v.shape != (len(SEGMENTS),):
                raise ParameterError(f"{label} needs {len(SEGMENTS)} entries")
            if np.any(v < lo) or np.any(v > hi) or not np.isfinite(v).all():
                raise ParameterError(f"{label} scales must lie in [{lo}, {hi}]")

    def scaled(self, factor):
        return IdentityParams(tuple(np.multiply(self.lengths, factor)), tuple(np.multiply(self.radii, factor)))


@dataclass(frozen=True)
class PoseParams:
    angles: tuple = ((0.0, 0.0, 0.0),) * N_JOINTS

    def validate(self):
        a = np.asarray(self.angles, dtype=np.float64)
        if a.shape != (N_JOINTS, 3):
            raise ParameterError(f"pose needs {N_JOINTS} x 3 angles")
        tol = 1e-12
        if np.any(a < JOINT_LIMITS[..., 0] - tol) or np.any(a > JOINT_LIMITS[..., 1] + tol):
            raise ParameterError("joint angle outside its limits")


def random_identity(rng, spread=0.25):
    overall = rng.uniform(0.85, 1.15)
    pairs = rng.uniform(1 - spread, 1 + spread, size=(2, 6))
    # left and right limbs share proportions
    lengths = np.concatenate([pairs[0, :2], pairs[0, 2:4], pairs[0, 2:4], pairs[0, 4:6], pairs[0, 4:6]])
    radii = np.concatenate([pairs[1, :2], pairs[1, 2:4], pairs[1, 2:4], pairs[1, 4:6], pairs[1, 4:6]])
    clip = lambda x: tuple(np.clip(overall * x, *SCALE_RANGE).tolist())  # noqa: E731
    return IdentityParams(clip(lengths), clip(radii))


def random_pose(rng):
    lo, hi = JOINT_LIMITS[..., 0], JOINT_LIMITS[..., 1]
    return PoseParams(tuple(map(tuple, rng.uniform(lo, hi).tolist())))


def _rest_skeleton(identity, quadruped):
    """Proximal joint position and unit bone direction of every segment at rest."""
    length = BASE_LENGTH * np.asarray(identity.lengths)
    radius = BASE_RADIUS * np.asarray(identity.radii)
    start = np.zeros((len(SEGMENTS), 3))
    direc = np.zeros((len(SEGMENTS), 3))
    if quadruped:
        length[0] *= QUADRUPED_TORSO
        forward, side, down = np.eye(3)[2], np.eye(3)[0], -np.eye(3)[1]
        direc[0] = forward
        neck = length[0] * forward + 0.5 * radius[0] * np.eye(3)[1]
        start[1], direc[1] = neck, (forward + np.eye(3)[1]) / np.sqrt(2.0)
        front, back = 0.85 * length[0] * forward, 0.15 * length[0] * forward
        for seg, base, sgn in ((2, front, 1), (4, front, -1), (6, back, 1), (8, back, -1)):
            start[seg] = base + sgn * 0.7 * radius[0] * side - 0.6 * radius[0] * np.eye(3)[1]
            direc[seg] = direc[seg + 1] = down
    else:
        y, x = np.eye(3)[1], np.eye(3)[0]
        direc[0] = y
        start[1], direc[1] = length[0] * y, y
        for seg, sgn in ((2, 1), (4, -1)):
            start[seg] = 0.9 * length[0] * y + sgn * 1.05 * radius[0] * x
            direc[seg] = direc[seg + 1] = sgn * x
        for seg, sgn in ((6, 1), (8, -1)):
            start[seg] = sgn * 0.55 * radius[0] * x
            direc[seg] = direc[seg + 1] = -y
    for seg in (3, 5, 7, 9):
        start[seg] = start[seg - 1] + length[seg - 1] * direc[seg - 1]
    return start, direc, length, radius


def _ellipsoid(start, direc, length, radius, rings, around):
    """Vertices, faces and axial parameter t in [0, 1] of one segment surface."""
    helper = np.eye(3)[np.argmin(np.abs(direc))]
    u = np.cross(direc, helper)
    u /= np.linalg.norm(u)
    w = np.cross(direc, u)
    theta = np.pi * np.arange(1, rings + 1) / (rings + 1)
    phi = 2 * np.pi * np.arange(around) / around
    t = np.concatenate([[0.0], np.repeat(0.5 * (1 - np.cos(theta)), around), [1.0]])
    ring_r = np.repeat(np.sin(theta), around)
    cphi, sphi = np.tile(np.cos(phi), rings), np.tile(np.sin(phi), rings)
    radial = np.concatenate([[0.0], ring_r, [0.0]])
    cphi = np.concatenate([[0.0], cphi, [0.0]])
    sphi = np.concatenate([[0.0], sphi, [0.0]])
    verts = (start + length * t[:, None] * direc
             + radius * radial[:, None] * (cphi[:, None] * u + sphi[:, None] * w))
    faces = []
    last = rings * around + 1
    for j in range(around):
        faces.append((0, 1 + (j + 1) % around, 1 + j))
    for r in range(rings - 1):
        a0, b0 = 1 + r * around, 1 + (r + 1) * around
        for j in range(around):
            jn = (j + 1) % around
            faces.append((a0 + j, a0 + jn, b0 + j))
            faces.append((a0 + jn, b0 + jn, b0 + j))
    base = 1 + (rings - 1) * around
    for j in range(around):
        faces.append((base + j, base + (j + 1) % around, last))
    return verts, np.array(faces, dtype=np.int64), t


def build_mesh(identity=IdentityParams(), pose=PoseParams(), cfg=GeneratorConfig(), name=""):
    """Skin the template for ``identity`` into ``pose``; deterministic."""
    identity.validate()
    pose.validate()
    start, direc, length, radius = _rest_skeleton(identity, cfg.quadruped)
    angles = np.asarray(pose.angles, dtype=np.float64)

    rot = [np.eye(3)] * len(SEGMENTS)
    origin = [np.zeros(3)] * len(SEGMENTS)  # posed proximal joint
    for seg in range(1, len(SEGMENTS)):
        p = PARENT[seg]
        local = Rotation.from_euler("xyz", angles[seg - 1]).as_matrix()
        rot[seg] = rot[p] @ local
        origin[seg] = rot[p] @ (start[seg] - start[p]) + origin[p]
    origin[0] = start[0]

    def transform(seg, x):
        return (x - start[seg]) @ rot[seg].T + origin[seg]

    verts, faces, offset = [], [], 0
    for seg in range(len(SEGMENTS)):
        rings, around = cfg.tessellation(seg)
        v, f, t = _ellipsoid(start[seg], direc[seg], length[seg], radius[seg], rings, around)
        posed = transform(seg, v)
        if PARENT[seg] >= 0:
            own = np.clip(0.5 + 0.5 * t / BLEND_ZONE, 0.5, 1.0)[:, None]
            posed = own * posed + (1.0 - own) * transform(PARENT[seg], v)
        verts.append(posed)
        faces.append(f + offset)
        offset += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(faces), name)


@dataclass
class PairSample:
    mesh_id: Mesh
    mesh_pose: Mesh
    mesh_gt: Mesh
    identity_id: int
    pose_identity_id: int
    pose_id: int
    identity_pose_id: int
    perm_id: np.ndarray
    perm_pose: np.ndarray
    seed: int
    sample_id: str = ""


@dataclass
class Pools:
    identities: list
    poses: list
    cfg: GeneratorConfig = field(default_factory=GeneratorConfig)


def make_pools(id_pool, pose_pool, seed, cfg=GeneratorConfig()):
    if id_pool < 1 or pose_pool < 1:
        raise ValueError("pools must be nonempty")
    ss = np.random.SeedSequence([seed, 0xB0D1])
    id_seq, pose_seq = ss.spawn(2)
    id_rng, pose_rng = np.random.default_rng(id_seq), np.random.default_rng(pose_seq)
    return Pools([random_identity(id_rng) for _ in range(id_pool)],
                 [random_pose(pose_rng) for _ in range(pose_pool)], cfg)


def split_identities(id_pool, n_test, seed):
    """Disjoint (train, test) identity index lists."""
    order = np.random.default_rng([seed, 0x5EED]).permutation(id_pool)
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def sample_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_sample(pools, index, seed, identity_ids=None, pose_ids=None):
    """One (identity, pose, ground truth) triple, drawn from a per-index stream."""
    s = sample_seed(seed, index)
    rng = np.random.default_rng(s)
    ids = np.arange(len(pools.identities)) if identity_ids is None else np.asarray(identity_ids)
    poses = np.arange(len(pools.poses)) if pose_ids is None else np.asarray(pose_ids)
    a, b = (int(x) for x in rng.choice(ids, size=2))
    p_id, p_pose = (int(x) for x in rng.choice(poses, size=2))
    cfg = pools.cfg
    m_id = center_mesh(build_mesh(pools.identities[a], pools.poses[p_id], cfg))
    m_pose = center_mesh(build_mesh(pools.identities[b], pools.poses[p_pose], cfg))
    m_gt = center_mesh(build_mesh(pools.identities[a], pools.poses[p_pose], cfg))
    perm_id = rng.permutation(m_id.n_vertices)
    perm_pose = rng.permutation(m_pose.n_vertices)
    sid = f"{index:05d}"

    def shuffled(mesh, perm, role):
        m = permute_vertices(mesh, perm)
        return Mesh(m.vertices, m.faces, f"{sid}_{role}")

    return PairSample(
        mesh_id=shuffled(m_id, perm_id, "id"),
        mesh_pose=shuffled(m_pose, perm_pose, "pose"),
        # ground truth follows the identity mesh's vertex order
        mesh_gt=shuffled(m_gt, perm_id, "gt"),
        identity_id=a, pose_identity_id=b, pose_id=p_pose, identity_pose_id=p_id,
        perm_id=perm_id, perm_pose=perm_pose, seed=s, sample_id=sid,
    )


def sample_pairs(n, id_pool, pose_pool, seed, cfg=GeneratorConfig(), identity_ids=None, pose_ids=None,
                 pools=None):
    if pools is None:
        pools = make_pools(id_pool, pose_pool, seed, cfg)
    return [make_sample(pools, i, seed, identity_ids, pose_ids) for i in range(n)]


# manifest I/O

MANIFEST_NAME = "manifest.json"


def write_dataset(samples, out_dir, meta):
    """Write every sample's three meshes as OBJ plus a JSON manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for s in samples:
        paths = {}
        for role, mesh in (("identity", s.mesh_id), ("pose", s.mesh_pose), ("gt", s.mesh_gt)):
            rel = f"{s.sample_id}_{role}.obj"
            save_obj(mesh, os.path.join(out_dir, rel))
            paths[role] = rel
        entries.append({"sample_id": s.sample_id, **paths, "identity_id": s.identity_id,
                        "pose_identity_id": s.pose_identity_id, "pose_id": s.pose_id,
                        "identity_pose_id": s.identity_pose_id, "seed": s.seed})
    manifest = {"meta": meta, "samples": entries}
    path = os.path.join(out_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp, path)
    return path


@dataclass
class ManifestEntry:
    sample_id: str
    mesh_id: Mesh
    mesh_pose: Mesh
    mesh_gt: Mesh | None


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path) as fh:
        manifest = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    out = []
    for e in manifest["samples"]:
        gt = load_obj(os.path.join(root, e["gt"])) if e.get("gt") else None
        out.append(ManifestEntry(e["sample_id"], load_obj(os.path.join(root, e["identity"])),
                                 load_obj(os.path.join(root, e["pose"])), gt))
    return out, manifest.get("meta", {})


def config_dict(cfg):
    return asdict(cfg)
