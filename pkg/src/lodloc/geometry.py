"""LoD mesh wireframes: OBJ parsing, salient-edge extraction, point sampling.

A wireframe edge is kept when the two faces meeting at it disagree in normal
direction by more than ``mu`` degrees, or when only one face touches it
(building silhouettes must survive). Edges shared by more than two faces are
judged pairwise and kept if any pair disagrees enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_MU_DEG = 10.0
DEFAULT_DELTA_M = 1.0
DEFAULT_POINT_LIMIT = 2000

# LoD exports commonly duplicate corner vertices; weld within this distance.
WELD_TOL = 1e-6

WIREFRAME_MAGIC = "LODWF"


@dataclass
class Mesh:
    """Polygon soup: (V, 3) float vertices and per-face index arrays."""

    vertices: np.ndarray
    faces: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = [np.asarray(f, dtype=np.int64).reshape(-1) for f in self.faces]

    def validate(self) -> None:
        n = len(self.vertices)
        for i, f in enumerate(self.faces):
            if len(f) < 3:
                raise ValidationError(f"face {i} has fewer than 3 vertices")
            if np.any(f < 0) or np.any(f >= n):
                raise ValidationError(f"face {i} index out of range")


@dataclass
class WireframeEdge:
    """A salient 3D segment with the unit normals of its adjacent faces."""

    a: np.ndarray
    b: np.ndarray
    normals: tuple = ()

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(3)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))


@dataclass
class WireframePoints:
    """Discrete samples along wireframe edges, tagged with their edge index."""

    points: np.ndarray
    source_edge: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.source_edge = np.asarray(self.source_edge, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.source_edge):
            raise ValidationError("points/source_edge length mismatch")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "WireframePoints":
        return cls(points=np.zeros((0, 3)), source_edge=np.zeros(0, dtype=np.int64))


def face_normal(face, mesh: Mesh) -> np.ndarray:
    """Unit normal of a polygon face via Newell's method (winding-oriented).

    Raises:
        ValidationError: face area below 1e-12 m^2.
    """
    idx = np.asarray(face, dtype=np.int64).reshape(-1)
    v = mesh.vertices[idx]
    nxt = np.roll(v, -1, axis=0)
    n = np.array([
        float(np.sum((v[:, 1] - nxt[:, 1]) * (v[:, 2] + nxt[:, 2]))),
        float(np.sum((v[:, 2] - nxt[:, 2]) * (v[:, 0] + nxt[:, 0]))),
        float(np.sum((v[:, 0] - nxt[:, 0]) * (v[:, 1] + nxt[:, 1]))),
    ])
    norm = float(np.linalg.norm(n))
    # Newell vector length equals twice the enclosed (planar) area.
    if norm / 2.0 <= 1e-12:
        raise ValidationError("degenerate face")
    return n / norm


def _weld_indices(vertices: np.ndarray) -> np.ndarray:
    """Map each vertex index to a canonical index, merging near-duplicates."""
    keys = np.round(vertices / WELD_TOL).astype(np.int64)
    seen: dict[tuple, int] = {}
    remap = np.empty(len(vertices), dtype=np.int64)
    for i, key in enumerate(map(tuple, keys)):
        remap[i] = seen.setdefault(key, i)
    return remap


def extract_wireframe(mesh: Mesh, mu_degrees: float = DEFAULT_MU_DEG) -> list[WireframeEdge]:
    """Extract salient edges: dihedral angle above ``mu`` or boundary edges.

    Duplicate vertices are welded before adjacency construction, duplicate
    undirected edges are merged, and the result is independent of face or
    vertex ordering (edges come out sorted by welded endpoint indices).
    """
    if not (0.0 < mu_degrees < 180.0):
        raise ValidationError("mu_degrees must lie in (0, 180)")
    mesh.validate()
    remap = _weld_indices(mesh.vertices)

    adjacency: dict[tuple[int, int], list[np.ndarray]] = {}
    for fi, f in enumerate(mesh.faces):
        n = face_normal(f, mesh)
        w = remap[f]
        for k in range(len(w)):
            i, j = int(w[k]), int(w[(k + 1) % len(w)])
            if i == j:
                continue  # collapsed by welding
            key = (i, j) if i < j else (j, i)
            adjacency.setdefault(key, []).append(n)

    cos_mu = math.cos(math.radians(mu_degrees))
    edges: list[WireframeEdge] = []
    for (i, j) in sorted(adjacency):
        normals = adjacency[(i, j)]
        if len(normals) == 1:
            keep = True
        else:
            keep = False
            for a in range(len(normals)):
                for b in range(a + 1, len(normals)):
                    d = float(np.clip(normals[a] @ normals[b], -1.0, 1.0))
                    if d < cos_mu:
                        keep = True
                        break
                if keep:
                    break
        if keep:
            edges.append(WireframeEdge(a=mesh.vertices[i], b=mesh.vertices[j],
                                       normals=tuple(normals[:2])))
    return edges


def sample_points(edges: list[WireframeEdge], delta: float = DEFAULT_DELTA_M) -> WireframePoints:
    """Sample each edge of length L at ceil(L/delta)+1 uniform points."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if not edges:
        return WireframePoints.empty()
    chunks = []
    owners = []
    for ei, e in enumerate(edges):
        n = max(1, int(math.ceil(e.length / delta - 1e-12)))
        ts = np.arange(n + 1, dtype=np.float64) / n
        chunks.append(e.a[None, :] + ts[:, None] * (e.b - e.a)[None, :])
        owners.append(np.full(n + 1, ei, dtype=np.int64))
    return WireframePoints(points=np.concatenate(chunks),
                           source_edge=np.concatenate(owners))


def subsample_points(points: WireframePoints, limit: int = DEFAULT_POINT_LIMIT,
                     seed: int = 0) -> WireframePoints:
    """Cap the point count with a seeded uniform random subset (order kept)."""
    if limit <= 0:
        raise ValidationError("limit must be positive")
    n = len(points)
    if n <= limit:
        return points
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=limit, replace=False))
    return WireframePoints(points=points.points[idx],
                           source_edge=points.source_edge[idx])


# ---------------------------------------------------------------------------
# Wavefront OBJ subset: `v x y z` and `f i j k ...` (1-based, optional /...).

def load_obj(path) -> Mesh:
    vertices = []
    faces = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ParseError(f"{path}:{lineno}: short vertex line")
                    try:
                        vertices.append([float(x) for x in parts[1:4]])
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: {exc}") from exc
                elif parts[0] == "f":
                    if len(parts) < 4:
                        raise ParseError(f"{path}:{lineno}: face needs >= 3 indices")
                    try:
                        idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: {exc}") from exc
                    faces.append(np.asarray(idx, dtype=np.int64))
                # every other line type is ignored
    except OSError as exc:
        raise ParseError(f"cannot read mesh file {path}: {exc}") from exc
    if not vertices:
        raise ParseError(f"{path}: no vertices found")
    mesh = Mesh(vertices=np.asarray(vertices, dtype=np.float64), faces=faces)
    mesh.validate()
    return mesh


def save_obj(path, mesh: Mesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.10g} {v[1]:.10g} {v[2]:.10g}\n")
        for f in mesh.faces:
            fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")


# ---------------------------------------------------------------------------
# Wireframe text format: header `LODWF 1 <edge_count>`, then one edge per
# line `e x1 y1 z1 x2 y2 z2`. Adjacent-face normals are not persisted; they
# only feed the extraction filter.

def save_wireframe(path, edges: list[WireframeEdge]) -> None:
    with open(path, "w") as fh:
        fh.write(f"{WIREFRAME_MAGIC} 1 {len(edges)}\n")
        for e in edges:
            coords = [*e.a, *e.b]
            fh.write("e " + " ".join(f"{c:.17g}" for c in coords) + "\n")


def load_wireframe(path) -> list[WireframeEdge]:
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3 or header[0] != WIREFRAME_MAGIC or header[1] != "1":
                raise ParseError(f"{path}: bad wireframe header")
            try:
                count = int(header[2])
            except ValueError as exc:
                raise ParseError(f"{path}: bad edge count") from exc
            edges = []
            for lineno, line in enumerate(fh, start=2):
                parts = line.split()
                if not parts:
                    continue
                if parts[0] != "e" or len(parts) != 7:
                    raise ParseError(f"{path}:{lineno}: expected `e x1 y1 z1 x2 y2 z2`")
                try:
                    c = [float(x) for x in parts[1:]]
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
                edges.append(WireframeEdge(a=c[:3], b=c[3:]))
    except OSError as exc:
        raise ParseError(f"cannot read wireframe file {path}: {exc}") from exc
    if len(edges) != count:
        raise ParseError(f"{path}: header says {count} edges, found {len(edges)}")
    return edges
