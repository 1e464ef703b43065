"""Triangle meshes, OBJ/PLY I/O and the preprocessing applied before training."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class MeshFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshFormatError(f"face index out of range for {len(v)} vertices")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshFormatError("face with repeated vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def with_vertices(self, vertices, name=None):
        return Mesh(vertices, self.faces, self.name if name is None else name)

    def edges(self):
        """Unique undirected edges as a sorted ``E x 2`` array (u < v)."""
        if not self.n_faces:
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self):
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.faces, other.faces))

    __hash__ = None


def load_obj(path):
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such OBJ file: {path}")
    vertices, faces, face_lines = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split("#", 1)[0].split()
            if not toks:
                continue
            if toks[0] == "v":
                if len(toks) < 4:
                    raise MeshFormatError(f"vertex record needs 3 coordinates at line {lineno}")
                try:
                    vertices.append([float(t) for t in toks[1:4]])
                except ValueError:
                    raise MeshFormatError(f"non-numeric coordinate at line {lineno}") from None
            elif toks[0] == "f":
                if len(toks) < 4:
                    raise MeshFormatError(f"face needs at least 3 vertices at line {lineno}")
                try:
                    idx = [int(t.split("/")[0]) for t in toks[1:]]
                except ValueError:
                    raise MeshFormatError(f"non-integer face index at line {lineno}") from None
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
                    face_lines.append(lineno)
    n = len(vertices)
    resolved = []
    for (i, j, k), lineno in zip(faces, face_lines):
        tri = []
        for raw in (i, j, k):
            # negative indices are relative to the vertices seen so far
            z = raw - 1 if raw > 0 else n + raw
            if raw == 0 or not 0 <= z < n:
                raise MeshFormatError(f"face index out of range at line {lineno}")
            tri.append(z)
        if len(set(tri)) != 3:
            raise MeshFormatError(f"degenerate face at line {lineno}")
        resolved.append(tri)
    name = os.path.splitext(os.path.basename(path))[0]
    return Mesh(np.array(vertices).reshape(-1, 3), np.array(resolved, dtype=np.int64).reshape(-1, 3), name)


def save_obj(mesh, path):
    lines = [f"# {mesh.name}\n"] if mesh.name else []
    lines += ["v %.9g %.9g %.9g\n" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d\n" % tuple(f + 1) for f in mesh.faces]
    _atomic_write(path, "".join(lines))


def save_ply(mesh, path, colors):
    """ASCII PLY with per-vertex uint8 RGB; ``colors`` is ``N x 3`` in [0, 255]."""
    colors = np.asarray(colors)
    if colors.shape != (mesh.n_vertices, 3):
        raise ValueError(f"need {mesh.n_vertices} x 3 colors, got {colors.shape}")
    colors = np.clip(np.rint(colors), 0, 255).astype(int)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = ["%.9g %.9g %.9g %d %d %d" % (*v, *c) for v, c in zip(mesh.vertices, colors)]
    body += ["3 %d %d %d" % tuple(f) for f in mesh.faces]
    _atomic_write(path, "\n".join(header + body) + "\n")


def load_ply(path):
    """Read the ASCII PLY written by :func:`save_ply`; returns ``(mesh, colors)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise MeshFormatError("not a PLY file")
    n_v = n_f = 0
    end = lines.index("end_header")
    for line in lines[:end]:
        toks = line.split()
        if toks[:2] == ["element", "vertex"]:
            n_v = int(toks[2])
        elif toks[:2] == ["element", "face"]:
            n_f = int(toks[2])
    rows = [line.split() for line in lines[end + 1:end + 1 + n_v]]
    data = np.array(rows, dtype=np.float64).reshape(-1, 6)
    faces = [list(map(int, line.split()[1:4])) for line in lines[end + 1 + n_v:end + 1 + n_v + n_f]]
    mesh = Mesh(data[:, :3], np.array(faces, dtype=np.int64).reshape(-1, 3),
                os.path.splitext(os.path.basename(path))[0])
    return mesh, data[:, 3:].astype(int)


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def center_mesh(mesh):
    """Translate so the axis-aligned bounding box is centered at the origin."""
    v = mesh.vertices
    mid = 0.5 * (v.min(axis=0) + v.max(axis=0))
    return mesh.with_vertices(v - mid)


def shuffle_vertices(mesh, seed):
    """Randomly reorder vertices; returns ``(mesh, perm)`` with ``perm[old] = new``."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_vertices)
    return permute_vertices(mesh, perm), perm


def permute_vertices(mesh, perm):
    """Move vertex ``i`` to slot ``perm[i]`` and rewrite faces to match."""
    perm = np.asarray(perm, dtype=np.int64)
    v = np.empty_like(mesh.vertices)
    v[perm] = mesh.vertices
    return Mesh(v, perm[mesh.faces], mesh.name)


def vertex_neighbors(mesh):
    """Sorted, deduplicated edge-neighbor lists for every vertex."""
    nbrs = [set() for _ in range(mesh.n_vertices)]
    for u, v in mesh.edges():
        nbrs[u].add(int(v))
        nbrs[v].add(int(u))
    return [sorted(s) for s in nbrs]


def directed_edges(adjacency):
    """Flatten neighbor lists to parallel ``(src, dst)`` index arrays."""
    src = [v for v, ns in enumerate(adjacency) for _ in ns]
    dst = [p for ns in adjacency for p in ns]
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)
