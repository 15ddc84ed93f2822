"""Meshes for 1D bars and 2D plane-strain domains.

A :class:`Mesh` stores reference coordinates, element connectivity
(2-node lines in 1D, 4-node bilinear quads in 2D), Dirichlet records
``(node, component, value)`` and Neumann records
``(element, local_edge, traction)``. Quad edges are numbered so that
edge ``k`` joins local nodes ``k`` and ``k+1 (mod 4)``; in 1D the "edge"
``k`` is the end point at local node ``k``.

The text format read and written here is::

    dim n_nodes n_elems
    id x [y]                 (n_nodes lines)
    id n1 n2 [n3 n4]         (n_elems lines)
    dirichlet node comp value
    neumann elem edge tx [ty]
    area A                   (optional; cross-section in 1D, thickness in 2D)
    lineload f               (optional; 1D distributed load per unit length)

Blank lines and ``#`` comments are ignored. Ids are 0-based and dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MeshError

# Quad corner positions in natural coordinates, counterclockwise.
QUAD_XI = np.array([-1.0, 1.0, 1.0, -1.0])
QUAD_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def _freeze(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable finite element mesh.

    Parameters
    ----------
    nodes : array_like, shape (n_nodes, dim)
        Reference coordinates (mm).
    elements : array_like of int, shape (n_elems, 2) or (n_elems, 4)
        Connectivity; quads must be counterclockwise.
    dirichlet : sequence of (node, component, value)
    neumann : sequence of (element, edge, traction)
        ``traction`` has ``dim`` entries (MPa in 2D; force per area in 1D).
    area : float
        Cross-section area in 1D, out-of-plane thickness in 2D.
    line_load : float
        Uniform distributed axial load per unit length (1D only).
    """

    nodes: np.ndarray
    elements: np.ndarray
    dirichlet: tuple = ()
    neumann: tuple = ()
    area: float = 1.0
    line_load: float = 0.0
    tags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", _freeze(nodes, float))
        object.__setattr__(self, "elements", _freeze(np.atleast_2d(self.elements), np.int64))
        object.__setattr__(
            self, "dirichlet",
            tuple((int(n), int(c), float(v)) for n, c, v in self.dirichlet),
        )
        object.__setattr__(
            self, "neumann",
            tuple((int(e), int(k), tuple(float(t) for t in tr)) for e, k, tr in self.neumann),
        )
        self._validate()

    # ------------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dof(self) -> int:
        return self.n_nodes * self.dim

    @property
    def nodes_per_element(self) -> int:
        return self.elements.shape[1]

    def dof(self, node, component):
        return node * self.dim + component

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Global DOF indices per element, node-major then component."""
        d = self.dim
        e = self.elements
        return (e[:, :, None] * d + np.arange(d)[None, None, :]).reshape(e.shape[0], -1)

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        return np.array([self.dof(n, c) for n, c, _ in self.dirichlet], dtype=np.int64)

    @cached_property
    def dirichlet_values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.dirichlet], dtype=float)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dof, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    def edge_nodes(self, element, edge):
        conn = self.elements[element]
        if self.dim == 1:
            return conn[[edge]]
        return conn[[edge, (edge + 1) % 4]]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Boolean mask of nodes on the domain boundary."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        if self.dim == 1:
            counts = np.bincount(self.elements.ravel(), minlength=self.n_nodes)
            mask[counts == 1] = True
            return mask
        edges = np.concatenate(
            [np.sort(self.elements[:, [k, (k + 1) % 4]], axis=1) for k in range(4)]
        )
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        mask[uniq[counts == 1].ravel()] = True
        return mask

    @property
    def bounding_diagonal(self) -> float:
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return float(np.linalg.norm(span))

    # ------------------------------------------------------------------
    def _validate(self):
        dim = self.dim
        if dim not in (1, 2):
            raise MeshError(f"only 1D and 2D meshes are supported, got dim={dim}")
        expected = 2 if dim == 1 else 4
        if self.elements.shape[1] != expected:
            raise MeshError(
                f"{dim}D meshes need {expected}-node elements, got {self.elements.shape[1]}"
            )
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= self.n_nodes):
            bad = np.flatnonzero(((self.elements < 0) | (self.elements >= self.n_nodes)).any(axis=1))
            raise MeshError(f"element {int(bad[0])} references a node that does not exist")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("node coordinates must be finite")
        if self.area <= 0:
            raise MeshError("area/thickness must be positive")

        detj = element_jacobians(self)
        bad = np.flatnonzero((detj <= 0).any(axis=1))
        if bad.size:
            raise MeshError(
                f"element {int(bad[0])} has a non-positive Jacobian (degenerate or clockwise)"
            )

        seen = set()
        for n, c, _ in self.dirichlet:
            if not (0 <= n < self.n_nodes) or not (0 <= c < dim):
                raise MeshError(f"Dirichlet record ({n}, {c}) is out of range")
            if (n, c) in seen:
                raise MeshError(f"duplicate Dirichlet record for node {n}, component {c}")
            seen.add((n, c))
        n_edges = 2 if dim == 1 else 4
        for e, k, tr in self.neumann:
            if not (0 <= e < self.n_elements) or not (0 <= k < n_edges):
                raise MeshError(f"Neumann record ({e}, {k}) is out of range")
            if len(tr) != dim:
                raise MeshError(f"Neumann traction on element {e} needs {dim} components")
            nodes = self.edge_nodes(e, k)
            for c in range(dim):
                if tr[c] != 0.0 and all((int(n), c) in seen for n in nodes):
                    raise MeshError(
                        f"Neumann edge {k} of element {e} is fully Dirichlet-constrained "
                        f"in component {c}"
                    )


def element_jacobians(mesh: Mesh) -> np.ndarray:
    """Jacobian determinants at the 2x2 (or 2-point) Gauss points, shape (n_el, n_gp)."""
    x = mesh.nodes[mesh.elements]
    g = 1.0 / math.sqrt(3.0)
    if mesh.dim == 1:
        return np.repeat(0.5 * (x[:, 1, 0] - x[:, 0, 0])[:, None], 2, axis=1)
    out = np.empty((mesh.n_elements, 4))
    for q, (xi, eta) in enumerate(zip(QUAD_XI * g, QUAD_ETA * g)):
        dxi = 0.25 * QUAD_XI * (1 + QUAD_ETA * eta)
        deta = 0.25 * QUAD_ETA * (1 + QUAD_XI * xi)
        j00 = x[:, :, 0] @ dxi
        j01 = x[:, :, 0] @ deta
        j10 = x[:, :, 1] @ dxi
        j11 = x[:, :, 1] @ deta
        out[:, q] = j00 * j11 - j01 * j10
    return out


# ----------------------------------------------------------------------
# Generators
# ----------------------------------------------------------------------
def make_bar_mesh(length: float, n_elements: int, area: float = 1.0,
                  tip_traction: float = 0.0, line_load: float = 0.0) -> Mesh:
    """Uniform 1D bar clamped at X=0 with an axial traction at X=L.

    ``tip_traction`` is a stress (force / area); a tip force F is passed as
    ``F / area``.
    """
    if length <= 0 or n_elements < 1:
        raise MeshError("bar needs a positive length and at least one element")
    nodes = np.linspace(0.0, length, n_elements + 1)[:, None]
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    neumann = [(n_elements - 1, 1, (tip_traction,))] if tip_traction != 0.0 else []
    return Mesh(nodes, elements, dirichlet=[(0, 0, 0.0)], neumann=neumann,
                area=area, line_load=line_load)


def make_plate_hole_mesh(R: float, L: float, refinement: int = 1, traction: float = 100.0,
                         grading: float = 2.0) -> Mesh:
    """Structured quad mesh of the quarter plate ``[0, L]^2`` minus a hole of radius ``R``.

    The mesh is one logical grid of ``(8r + 1) x (6r + 1)`` nodes: the
    angular index sweeps the hole arc from 0 to 90 degrees, the radial
    index blends each arc point linearly towards the outer boundary
    (right edge for angles below 45 degrees, top edge above). Radial
    spacing is graded towards the hole.

    Symmetry conditions: ``u_x = 0`` on ``X = 0`` and ``u_y = 0`` on ``Y = 0``.
    A uniform traction ``(traction, 0)`` acts on ``X = L``.
    """
    if not (0.0 < R < 0.5 * L):
        raise MeshError(f"plate with hole needs 0 < R < L/2, got R={R}, L={L}")
    if int(refinement) != refinement or refinement < 1:
        raise MeshError("refinement must be a positive integer")
    n_arc = 4 * refinement        # angular cells per 45-degree block
    n_rad = 6 * refinement
    n_theta = 2 * n_arc

    theta = np.linspace(0.0, 0.5 * np.pi, n_theta + 1)
    inner = R * np.column_stack([np.cos(theta), np.sin(theta)])
    outer = np.empty_like(inner)
    for j, th in enumerate(theta):
        if j <= n_arc:
            outer[j] = (L, L * math.tan(th))
        else:
            outer[j] = (L / math.tan(th), L)
    outer[n_arc] = (L, L)
    outer[-1] = (0.0, L)

    s = np.linspace(0.0, 1.0, n_rad + 1)
    t = np.expm1(grading * s) / math.expm1(grading) if grading > 0 else s

    # node index = j * (n_rad + 1) + k
    nodes = (inner[:, None, :] * (1.0 - t)[None, :, None]
             + outer[:, None, :] * t[None, :, None]).reshape(-1, 2)
    nodes[np.abs(nodes) < 1e-14 * L] = 0.0

    def nid(j, k):
        return j * (n_rad + 1) + k

    elements = []
    for j in range(n_theta):
        for k in range(n_rad):
            elements.append([nid(j, k), nid(j, k + 1), nid(j + 1, k + 1), nid(j + 1, k)])
    elements = np.array(elements, dtype=np.int64)

    tol = 1e-10 * L
    dirichlet = []
    for n, (x, y) in enumerate(nodes):
        if abs(x) < tol:
            dirichlet.append((n, 0, 0.0))
        if abs(y) < tol:
            dirichlet.append((n, 1, 0.0))

    neumann = []
    for e, conn in enumerate(elements):
        # local edge 1 joins local nodes 1 and 2 (outer radial end)
        xs = nodes[conn[[1, 2]], 0]
        if np.all(np.abs(xs - L) < tol):
            neumann.append((e, 1, (traction, 0.0)))

    mesh = Mesh(nodes, elements, dirichlet=dirichlet, neumann=neumann)
    mesh.tags.update(kind="plate_hole", R=R, L=L, refinement=refinement,
                     n_theta=n_theta, n_rad=n_rad)
    return mesh


def plate_sensor_nodes(mesh: Mesh, step_theta: int = 3, step_rad: int = 4) -> np.ndarray:
    """Uniform node subsample of a plate mesh from :func:`make_plate_hole_mesh`.

    Every ``step_theta``-th angular line (the ``Y = 0`` reference line
    included) and every ``step_rad``-th radial station are kept.
    """
    n_theta = mesh.tags["n_theta"]
    n_rad = mesh.tags["n_rad"]
    js = np.arange(0, n_theta + 1, step_theta)
    ks = np.arange(0, n_rad + 1, step_rad)
    return (js[:, None] * (n_rad + 1) + ks[None, :]).ravel()


# ----------------------------------------------------------------------
# Text I/O
# ----------------------------------------------------------------------
def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    lines = [f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements}"]
    for i, x in enumerate(mesh.nodes):
        lines.append(f"{i} " + " ".join(repr(float(c)) for c in x))
    for i, conn in enumerate(mesh.elements):
        lines.append(f"{i} " + " ".join(str(int(n)) for n in conn))
    for n, c, v in mesh.dirichlet:
        lines.append(f"dirichlet {n} {c} {v!r}")
    for e, k, tr in mesh.neumann:
        lines.append(f"neumann {e} {k} " + " ".join(repr(t) for t in tr))
    if mesh.area != 1.0:
        lines.append(f"area {mesh.area!r}")
    if mesh.line_load != 0.0:
        lines.append(f"lineload {mesh.line_load!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> Mesh:
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")
    rows = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise MeshError(f"{path}: empty mesh file")
    try:
        dim, n_nodes, n_elems = (int(v) for v in rows[0])
    except ValueError as exc:
        raise MeshError(f"{path}: bad header {' '.join(rows[0])!r}") from exc
    if len(rows) < 1 + n_nodes + n_elems:
        raise MeshError(f"{path}: expected {n_nodes} nodes and {n_elems} elements")

    try:
        nodes = np.empty((n_nodes, dim))
        for i, row in enumerate(rows[1:1 + n_nodes]):
            if int(row[0]) != i:
                raise MeshError(f"{path}: node ids must be 0..n-1 in order (line for id {row[0]})")
            nodes[i] = [float(v) for v in row[1:1 + dim]]
        n_en = 2 if dim == 1 else 4
        elements = np.empty((n_elems, n_en), dtype=np.int64)
        for i, row in enumerate(rows[1 + n_nodes:1 + n_nodes + n_elems]):
            if int(row[0]) != i:
                raise MeshError(f"{path}: element ids must be 0..n-1 in order")
            elements[i] = [int(v) for v in row[1:1 + n_en]]

        dirichlet, neumann = [], []
        area, line_load = 1.0, 0.0
        for row in rows[1 + n_nodes + n_elems:]:
            key = row[0]
            if key == "dirichlet":
                dirichlet.append((int(row[1]), int(row[2]), float(row[3])))
            elif key == "neumann":
                neumann.append((int(row[1]), int(row[2]), tuple(float(v) for v in row[3:3 + dim])))
            elif key == "area":
                area = float(row[1])
            elif key == "lineload":
                line_load = float(row[1])
            else:
                raise MeshError(f"{path}: unknown record {key!r}")
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed record ({exc})") from exc
    return Mesh(nodes, elements, dirichlet=dirichlet, neumann=neumann,
                area=area, line_load=line_load)
