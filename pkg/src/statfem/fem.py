"""Deterministic finite element core.

Linear elastic (LE) and St. Venant Kirchhoff (SV) solves on 2-node bars and
4-node bilinear plane-strain quads, sensor projection, nodal stress
recovery and weak-form equilibrium residuals. All element loops are
vectorised over (element, Gauss point) with ``einsum``.

Displacements are plain ``ndarray`` vectors of length ``n_dof`` ordered
node-major then component.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, MeshError, SensorLocationError, SingularSystemError
from .mesh import QUAD_ETA, QUAD_XI, Mesh

_G = 1.0 / math.sqrt(3.0)


# ----------------------------------------------------------------------
# Material
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class MaterialParams:
    """Young's modulus (GPa), Poisson ratio and constitutive model ("LE" or "SV")."""

    youngs_modulus: float
    poisson_ratio: float = 0.0
    model: str = "LE"

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not (0.0 <= self.poisson_ratio < 0.5):
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.poisson_ratio}")
        if self.model not in ("LE", "SV"):
            raise ValueError(f"unknown material model {self.model!r}")

    def with_modulus(self, E):
        return MaterialParams(float(E), self.poisson_ratio, self.model)


def constitutive_matrix(E: float, nu: float) -> np.ndarray:
    """Plane-strain matrix ``D = E * D*`` in Voigt order (xx, yy, xy-engineering)."""
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return c * np.array([
        [1.0 - nu, nu, 0.0],
        [nu, 1.0 - nu, 0.0],
        [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
    ])


def constitutive_matrix_3d(E: float, nu: float) -> np.ndarray:
    """3D isotropic matrix in Voigt order. Provided as data; there is no 3D solver."""
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    D = np.zeros((6, 6))
    D[:3, :3] = nu
    D[np.arange(3), np.arange(3)] = 1.0 - nu
    D[np.arange(3, 6), np.arange(3, 6)] = 0.5 * (1.0 - 2.0 * nu)
    return c * D


def elasticity_tensor(E: float, nu: float, dim: int) -> np.ndarray:
    """Fourth-order tensor ``E * D*_ijkl`` restricted to ``dim`` in-plane axes.

    In 1D the bar is uniaxial and the tensor is just ``E``.
    """
    if dim == 1:
        return np.full((1, 1, 1, 1), float(E))
    lam = nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = 1.0 / (2.0 * (1.0 + nu))
    d = np.eye(dim)
    C = (lam * np.einsum("ij,kl->ijkl", d, d)
         + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))
    return E * C


# ----------------------------------------------------------------------
# Geometry cache
# ----------------------------------------------------------------------
def _reference_rule(dim):
    """Gauss points, weights, shape values and natural derivatives."""
    if dim == 1:
        pts = np.array([[-_G], [_G]])
        w = np.ones(2)
        N = np.column_stack([0.5 * (1 - pts[:, 0]), 0.5 * (1 + pts[:, 0])])
        dN = np.broadcast_to(np.array([[-0.5], [0.5]]), (2, 2, 1)).copy()
        return pts, w, N, dN
    # ordered like the element corners so nodal extrapolation is N(sqrt(3) * corner)
    pts = np.column_stack([QUAD_XI * _G, QUAD_ETA * _G])
    w = np.ones(4)
    N = np.array([quad_shape(xi, eta) for xi, eta in pts])
    dN = np.array([quad_shape_derivatives(xi, eta) for xi, eta in pts])
    return pts, w, N, dN


def quad_shape(xi, eta):
    return 0.25 * (1 + QUAD_XI * xi) * (1 + QUAD_ETA * eta)


def quad_shape_derivatives(xi, eta):
    """(4, 2) array of dN_a/dxi, dN_a/deta."""
    return 0.25 * np.column_stack([QUAD_XI * (1 + QUAD_ETA * eta), QUAD_ETA * (1 + QUAD_XI * xi)])


class _Geometry:
    def __init__(self, mesh: Mesh):
        pts, w, N, dN = _reference_rule(mesh.dim)
        x = mesh.nodes[mesh.elements]                      # (e, a, i)
        J = np.einsum("eai,gaj->egij", x, dN)              # dx_i / dxi_j
        detJ = np.linalg.det(J)
        if np.any(detJ <= 0):
            bad = int(np.flatnonzero((detJ <= 0).any(axis=1))[0])
            raise MeshError(f"element {bad} has a non-positive Jacobian")
        invJ = np.linalg.inv(J)                            # dxi_j / dx_i
        self.dNdX = np.einsum("gaj,egji->egai", dN, invJ)  # (e, g, a, i)
        self.wdet = w[None, :] * detJ * mesh.area          # (e, g)
        self.N = N                                         # (g, a)
        self.points = pts
        if mesh.dim == 1:
            extrap = np.array([[0.5 * (1 - r), 0.5 * (1 + r)] for r in (-math.sqrt(3), math.sqrt(3))])
        else:
            extrap = np.array([quad_shape(math.sqrt(3) * xi, math.sqrt(3) * eta)
                               for xi, eta in zip(QUAD_XI, QUAD_ETA)])
        self.extrapolation = extrap                        # (node a, gauss g)
        dofs = mesh.element_dofs
        self.rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
        self.cols = np.tile(dofs, (1, dofs.shape[1])).ravel()


_GEOMETRY = weakref.WeakKeyDictionary()


def _geometry(mesh: Mesh) -> _Geometry:
    geom = _GEOMETRY.get(mesh)
    if geom is None:
        geom = _GEOMETRY[mesh] = _Geometry(mesh)
    return geom


# ----------------------------------------------------------------------
# Assembly
# ----------------------------------------------------------------------
def _assemble_matrix(mesh, ke):
    geom = _geometry(mesh)
    n = mesh.n_dof
    K = sp.coo_matrix((ke.ravel(), (geom.rows, geom.cols)), shape=(n, n))
    return K.tocsr()


def _assemble_vector(mesh, fe):
    return np.bincount(mesh.element_dofs.ravel(), weights=fe.ravel(), minlength=mesh.n_dof)


def _element_displacements(mesh, u):
    return u[mesh.element_dofs].reshape(mesh.n_elements, mesh.nodes_per_element, mesh.dim)


def displacement_gradient(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """``du_i/dX_J`` at every Gauss point, shape (n_el, n_gp, dim, dim)."""
    geom = _geometry(mesh)
    return np.einsum("eai,egaJ->egiJ", _element_displacements(mesh, u), geom.dNdX)


def stiffness_matrix(mesh: Mesh, mat: MaterialParams) -> sp.csr_matrix:
    """Linear elastic stiffness (plane strain in 2D, EA-weighted in 1D)."""
    geom = _geometry(mesh)
    C = elasticity_tensor(mat.youngs_modulus, mat.poisson_ratio, mesh.dim)
    ke = np.einsum("egaJ,iJkL,egbL,eg->eaibk", geom.dNdX, C, geom.dNdX, geom.wdet, optimize=True)
    n = mesh.nodes_per_element * mesh.dim
    return _assemble_matrix(mesh, ke.reshape(mesh.n_elements, n, n))


def external_force(mesh: Mesh) -> np.ndarray:
    """Consistent nodal forces from Neumann tractions and the 1D line load."""
    f = np.zeros(mesh.n_dof)
    d = mesh.dim
    for e, k, tr in mesh.neumann:
        nodes = mesh.edge_nodes(e, k)
        if d == 1:
            f[nodes[0]] += tr[0] * mesh.area
            continue
        length = np.linalg.norm(mesh.nodes[nodes[1]] - mesh.nodes[nodes[0]])
        for n in nodes:
            for c in range(d):
                f[n * d + c] += 0.5 * tr[c] * length * mesh.area
    if d == 1 and mesh.line_load != 0.0:
        geom = _geometry(mesh)
        fe = mesh.line_load * np.einsum("ga,eg->ea", geom.N, geom.wdet / mesh.area)
        f += _assemble_vector(mesh, fe)
    return f


def _rigid_modes(mesh):
    if mesh.dim == 1:
        return np.ones((mesh.n_dof, 1))
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    R = np.zeros((mesh.n_nodes, 2, 3))
    R[:, 0, 0] = 1.0
    R[:, 1, 1] = 1.0
    R[:, 0, 2] = -y
    R[:, 1, 2] = x
    return R.reshape(mesh.n_dof, 3)


def check_constraints(mesh: Mesh):
    """Raise :class:`SingularSystemError` when Dirichlet data leave a rigid-body mode."""
    R = _rigid_modes(mesh)
    RD = R[mesh.dirichlet_dofs]
    rank = np.linalg.matrix_rank(RD) if RD.size else 0
    if rank < R.shape[1]:
        raise SingularSystemError(
            f"insufficient Dirichlet constraints: {R.shape[1] - rank} rigid-body mode(s) remain"
        )


def _solve_free(K, rhs, what="stiffness"):
    try:
        lu = spla.splu(sp.csc_matrix(K))
    except RuntimeError as exc:
        raise SingularSystemError(f"singular {what} matrix: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(f"singular {what} matrix (non-finite solution)")
    return x


def solve_linear_elastic(mesh: Mesh, mat: MaterialParams, load_factor: float = 1.0) -> np.ndarray:
    """Solve ``K u = f`` with exact Dirichlet enforcement by elimination."""
    if mat.model != "LE":
        raise ValueError("solve_linear_elastic needs an LE material")
    check_constraints(mesh)
    K = stiffness_matrix(mesh, mat)
    f = load_factor * external_force(mesh)
    u = np.zeros(mesh.n_dof)
    D, free = mesh.dirichlet_dofs, mesh.free_dofs
    u[D] = load_factor * mesh.dirichlet_values
    rhs = f[free] - K[free][:, D] @ u[D]
    u[free] = _solve_free(K[free][:, free], rhs)
    return u


# ----------------------------------------------------------------------
# St. Venant Kirchhoff
# ----------------------------------------------------------------------
def _sv_state(mesh, mat, u):
    geom = _geometry(mesh)
    d = mesh.dim
    C = elasticity_tensor(mat.youngs_modulus, mat.poisson_ratio, d)
    F = np.eye(d) + displacement_gradient(mesh, u)
    E = 0.5 * (np.einsum("egkI,egkJ->egIJ", F, F) - np.eye(d))
    S = np.einsum("IJKL,egKL->egIJ", C, E)
    P = np.einsum("egiK,egKJ->egiJ", F, S)
    return geom, C, F, S, P


def sv_internal_force(mesh: Mesh, mat: MaterialParams, u: np.ndarray) -> np.ndarray:
    geom, _, _, _, P = _sv_state(mesh, mat, u)
    fe = np.einsum("egiJ,egaJ,eg->eai", P, geom.dNdX, geom.wdet, optimize=True)
    return _assemble_vector(mesh, fe)


def sv_tangent(mesh: Mesh, mat: MaterialParams, u: np.ndarray) -> sp.csr_matrix:
    """Consistent tangent of the SV internal force (material + geometric parts)."""
    geom, C, F, S, _ = _sv_state(mesh, mat, u)
    dN, w = geom.dNdX, geom.wdet
    d = mesh.dim
    Bt = np.einsum("egiI,egaJ->egaiIJ", F, dN)
    k_mat = np.einsum("egaiIJ,IJKL,egbkKL,eg->eaibk", Bt, C, Bt, w, optimize=True)
    k_geo = np.einsum("egaJ,egJL,egbL,eg->eab", dN, S, dN, w, optimize=True)
    k_mat += np.einsum("eab,ik->eaibk", k_geo, np.eye(d))
    n = mesh.nodes_per_element * d
    return _assemble_matrix(mesh, k_mat.reshape(mesh.n_elements, n, n))


class NewtonInfo(NamedTuple):
    iterations: int
    residual_norm: float
    steps: int


def _newton_path(mesh, mat, f_full, load_factor, tol, max_iter, n_steps, u0):
    D, free = mesh.dirichlet_dofs, mesh.free_dofs
    u = np.zeros(mesh.n_dof) if u0 is None else np.array(u0, dtype=float)
    total_iter, worst = 0, 0
    rnorm = float("nan")
    for step in range(1, n_steps + 1):
        lam = step / n_steps
        f = lam * f_full
        u[D] = lam * load_factor * mesh.dirichlet_values
        scale = max(1.0, float(np.linalg.norm(f[free])))
        for it in range(1, max_iter + 1):
            r = sv_internal_force(mesh, mat, u) - f
            rnorm = float(np.linalg.norm(r[free]))
            if not np.isfinite(rnorm):
                raise ConvergenceError("Newton iteration produced a non-finite residual",
                                       rnorm, total_iter + it)
            if rnorm <= tol * scale:
                total_iter += it
                worst = max(worst, it)
                break
            Kt = sv_tangent(mesh, mat, u)
            u[free] -= _solve_free(Kt[free][:, free], r[free], what="tangent")
        else:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations at load step {step}/{n_steps} "
                f"(residual norm {rnorm:.3e})", rnorm, total_iter + max_iter)
    return u, NewtonInfo(total_iter, rnorm, n_steps), worst


def solve_st_venant(mesh: Mesh, mat: MaterialParams, tol: float = 1e-10, max_iter: int = 25,
                    n_steps: int = 1, u0: np.ndarray | None = None, load_factor: float = 1.0,
                    return_info: bool = False, slow_iter: int | None = 12, max_steps: int = 32):
    """Total-Lagrangian Newton-Raphson solve of the SV problem.

    Convergence is declared when the free-DOF residual 2-norm drops below
    ``tol * max(1, ||f_ext||)``. The load is applied in ``n_steps`` equal
    increments; ``u0`` seeds the first increment.

    SV equilibria are not unique under compression, and a full-load Newton
    step that wanders can settle on a spurious branch. When an increment
    needs more than ``slow_iter`` iterations (or fails), the solve restarts
    with twice the number of increments, up to ``max_steps``. Pass
    ``slow_iter=None`` to disable the restart.
    """
    if mat.model != "SV":
        raise ValueError("solve_st_venant needs an SV material")
    check_constraints(mesh)
    f_full = load_factor * external_force(mesh)
    steps = n_steps
    while True:
        can_retry = slow_iter is not None and 2 * steps <= max_steps
        try:
            u, info, worst = _newton_path(mesh, mat, f_full, load_factor, tol, max_iter, steps, u0)
        except ConvergenceError:
            if not can_retry:
                raise
            steps *= 2
            continue
        if can_retry and worst > slow_iter:
            steps *= 2
            continue
        break
    if return_info:
        return u, info
    return u


def solve(mesh: Mesh, mat: MaterialParams, **newton) -> np.ndarray:
    """Dispatch on ``mat.model``; ``newton`` options only apply to SV."""
    if mat.model == "LE":
        return solve_linear_elastic(mesh, mat)
    return solve_st_venant(mesh, mat, **newton)


# ----------------------------------------------------------------------
# Sensors
# ----------------------------------------------------------------------
def _locate_quad(xe, p, tol):
    """Natural coordinates of ``p`` in quad ``xe`` (4, 2) or None when outside."""
    nat = np.zeros(2)
    for _ in range(30):
        N = quad_shape(*nat)
        r = N @ xe - p
        J = (quad_shape_derivatives(*nat).T @ xe).T  # dx_i / dxi_j
        step = np.linalg.solve(J, r)
        nat -= step
        if np.max(np.abs(step)) < 1e-14:
            break
        if np.max(np.abs(nat)) > 10:
            return None
    if np.max(np.abs(nat)) <= 1.0 + tol:
        return np.clip(nat, -1.0, 1.0)
    return None


def locate_points(mesh: Mesh, points) -> list[tuple[int, np.ndarray]]:
    """(element, shape-function values) for each point; lowest element index wins ties."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.dim == 1 and pts.shape[0] == 1 and pts.shape[1] > 1:
        pts = pts.T
    tol = 1e-8 * max(mesh.bounding_diagonal, 1e-300)
    x = mesh.nodes[mesh.elements]
    lo, hi = x.min(axis=1) - tol, x.max(axis=1) + tol
    out = []
    for s, p in enumerate(pts):
        cand = np.flatnonzero(np.all((p >= lo) & (p <= hi), axis=1))
        found = None
        for e in cand:
            if mesh.dim == 1:
                x0, x1 = x[e, 0, 0], x[e, 1, 0]
                t = np.clip((p[0] - x0) / (x1 - x0), 0.0, 1.0)
                found = (int(e), np.array([1.0 - t, t]))
                break
            h = np.linalg.norm(x[e, 2] - x[e, 0])
            nat = _locate_quad(x[e], p, tol / h * 2.0 + 1e-12)
            if nat is not None:
                found = (int(e), quad_shape(*nat))
                break
        if found is None:
            raise SensorLocationError(s, p)
        out.append(found)
    return out


def projection_matrix(mesh: Mesh, sensor_coords) -> np.ndarray:
    """Dense ``H`` of shape (n_sensors * dim, n_dof) interpolating nodal displacements."""
    located = locate_points(mesh, sensor_coords)
    d = mesh.dim
    H = np.zeros((len(located) * d, mesh.n_dof))
    for s, (e, N) in enumerate(located):
        conn = mesh.elements[e]
        for c in range(d):
            H[s * d + c, conn * d + c] += N
    return H


# ----------------------------------------------------------------------
# Stresses and equilibrium
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class StressField:
    """Nodal stress tensors (n_nodes, dim, dim) plus the Gauss-point values.

    ``kind`` is ``"cauchy"`` (LE) or ``"pk1"`` (first Piola-Kirchhoff, SV;
    not symmetric in general).
    """

    nodal: np.ndarray
    kind: str
    gauss: np.ndarray | None = None

    def component(self, i, j):
        return self.nodal[:, i, j]


def gauss_stress(mesh: Mesh, u: np.ndarray, mat: MaterialParams) -> np.ndarray:
    d = mesh.dim
    if mat.model == "LE":
        C = elasticity_tensor(mat.youngs_modulus, mat.poisson_ratio, d)
        grad = displacement_gradient(mesh, u)
        eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        return np.einsum("ijkl,egkl->egij", C, eps)
    return _sv_state(mesh, mat, u)[-1]


def nodal_average(mesh: Mesh, gauss_values: np.ndarray) -> np.ndarray:
    """Extrapolate Gauss-point tensors to element corners and average at shared nodes."""
    geom = _geometry(mesh)
    per_node = np.einsum("ag,eg...->ea...", geom.extrapolation, gauss_values)
    flat = per_node.reshape(mesh.n_elements * mesh.nodes_per_element, -1)
    idx = mesh.elements.ravel()
    sums = np.zeros((mesh.n_nodes, flat.shape[1]))
    np.add.at(sums, idx, flat)
    counts = np.bincount(idx, minlength=mesh.n_nodes)
    return (sums / counts[:, None]).reshape((mesh.n_nodes,) + gauss_values.shape[2:])


def recover_stress(mesh: Mesh, u: np.ndarray, mat: MaterialParams) -> StressField:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_dof,):
        raise ValueError(f"displacement has shape {u.shape}, mesh needs ({mesh.n_dof},)")
    g = gauss_stress(mesh, u, mat)
    return StressField(nodal_average(mesh, g), "cauchy" if mat.model == "LE" else "pk1", g)


@dataclass(frozen=True)
class EquilibriumResidual:
    per_node: np.ndarray   # (n_nodes, dim)
    interior: np.ndarray   # bool mask (n_nodes,)

    def interior_norm(self, component=None) -> float:
        r = self.per_node[self.interior]
        if component is not None:
            r = r[:, component]
        return float(np.linalg.norm(r))


def equilibrium_residual(mesh: Mesh, stress) -> EquilibriumResidual:
    """Weak-form divergence residual of a nodal stress field.

    The nodal tensors are interpolated with the element shape functions and
    tested against every shape-function gradient:
    ``r_a,i = sum_e int dN_a/dX_J P^h_iJ dOmega``. Interior nodes (not on
    the domain boundary) carry the equilibrium defect with zero body force.
    """
    nodal = stress.nodal if isinstance(stress, StressField) else np.asarray(stress)
    geom = _geometry(mesh)
    Pe = nodal[mesh.elements]                              # (e, a, i, J)
    Pg = np.einsum("gb,ebiJ->egiJ", geom.N, Pe)
    fe = np.einsum("egiJ,egaJ,eg->eai", Pg, geom.dNdX, geom.wdet, optimize=True)
    r = _assemble_vector(mesh, fe).reshape(mesh.n_nodes, mesh.dim)
    return EquilibriumResidual(r, ~mesh.boundary_nodes)


# ----------------------------------------------------------------------
# Analytic bar
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BarProblem:
    """1D bar: length (mm), area (mm^2), tip load F (kN), line load f (kN/mm),
    modulus E0 (GPa) and exponential rate beta (1/mm) for ``E(X) = E0 exp(beta X)``."""

    length: float = 100.0
    area: float = 20.0
    tip_load: float = 800.0
    line_load: float = 0.0
    youngs_modulus: float = 200.0
    beta: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.area <= 0:
            raise ValueError("bar length and area must be positive")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")


def analytic_bar(problem: BarProblem, X, youngs_modulus=None):
    """Closed-form bar displacement at ``X``.

    Homogeneous: ``u = (F X + f L X - f X^2 / 2) / (E A)``.
    Exponential modulus (``beta != 0``, ``f = 0``):
    ``u = F / (E0 beta A) (1 - exp(-beta X))``.
    ``youngs_modulus`` overrides ``problem.youngs_modulus`` and broadcasts.
    """
    X = np.asarray(X, dtype=float)
    L, A, F, f, b = problem.length, problem.area, problem.tip_load, problem.line_load, problem.beta
    E = problem.youngs_modulus if youngs_modulus is None else np.asarray(youngs_modulus, dtype=float)
    if np.any(X < -1e-12 * L) or np.any(X > L * (1 + 1e-12)):
        raise ValueError("X must lie in [0, L]")
    if b == 0.0:
        return (F * X + f * L * X - 0.5 * f * X**2) / (E * A)
    if f != 0.0:
        raise ValueError("the exponential-modulus solution assumes zero line load")
    if abs(b) * L > 700.0:
        raise OverflowError(f"beta={b} makes exp(-beta X) under/overflow on [0, {L}]")
    return F / (E * b * A) * (-np.expm1(-b * X))
