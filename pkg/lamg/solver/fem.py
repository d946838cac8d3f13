import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import sparse

from lamg.exceptions import DegenerateElement, NoConvergence, PointOutsideMesh, ZeroReference
from lamg.models.run_models import NormKind
from lamg.solver.problem import PoissonProblem, SourceTerm
from lamg.solver.tet_mesh import TetMesh

logger = logging.getLogger(__name__)


@dataclass
class FemSystem:
    """
    P1 discretization of Delta u = f.

    `stiffness` is K = -L (L the piecewise-linear Laplacian), so the interior
    equations read K_II u_I = -M_I f_I - K_IB g_B.
    """
    mesh: TetMesh
    stiffness: sparse.csr_matrix
    mass: np.ndarray
    rhs: np.ndarray
    boundary_mask: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def laplacian(self) -> sparse.csr_matrix:
        return -self.stiffness

    def reduced(self) -> Tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
        """Interior block, its right-hand side and the interior indices"""
        interior = np.nonzero(~self.boundary_mask)[0]
        boundary = np.nonzero(self.boundary_mask)[0]
        a_ii = self.stiffness[interior][:, interior].tocsr()
        a_ib = self.stiffness[interior][:, boundary]
        b = self.rhs[interior] - a_ib @ self.dirichlet_values[boundary]
        return a_ii, b, interior


@dataclass
class Solution:
    mesh: TetMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.values) != self.mesh.n_vertices:
            raise ValueError("solution length must equal the vertex count")

    def interpolate(self, x: np.ndarray) -> float:
        return float(self.interpolate_many(np.reshape(x, (1, 3)))[0])

    def interpolate_many(self, points: np.ndarray) -> np.ndarray:
        """
        Barycentric interpolation of vertex values in the containing tets.

        Raises:
            PointOutsideMesh: if any point is outside the mesh
        """
        tets, bary = self.mesh.locate(points)
        missing = np.nonzero(tets < 0)[0]
        if len(missing):
            raise PointOutsideMesh(f"{len(missing)} points outside the mesh, first at {np.atleast_2d(points)[missing[0]]}")
        return np.einsum("pi,pi->p", bary, self.values[self.mesh.tets[tets]])

    def gradients(self) -> np.ndarray:
        """(T, 3) constant P1 gradient in each tet"""
        return element_gradients(self.mesh, self.values)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.interpolate_many(points)


def basis_gradients(mesh: TetMesh) -> np.ndarray:
    """(T, 4, 3) gradients of the four barycentric basis functions per tet"""
    p = mesh.vertices[mesh.tets]
    frame = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
    # rows of frame^-1 are the gradients of lambda_1..lambda_3
    inverse = np.linalg.inv(frame)
    return np.concatenate([-inverse.sum(axis=1, keepdims=True), inverse], axis=1)


def element_gradients(mesh: TetMesh, values: np.ndarray) -> np.ndarray:
    return np.einsum("tij,ti->tj", basis_gradients(mesh), values[mesh.tets])


def assemble(mesh: TetMesh, prob: PoissonProblem) -> FemSystem:
    """
    Assemble stiffness, lumped mass and Dirichlet data for a problem.

    Args:
        mesh (TetMesh): Tetrahedral discretization of the problem's domain
        prob (PoissonProblem): Problem with Delta u = f

    Returns:
        FemSystem: System ready for `solve`

    Raises:
        DegenerateElement: if any tet volume is below 1e-14 * bbox_diag^3
    """
    eps_vol = 1e-14 * mesh.bbox_diagonal ** 3
    degenerate = np.nonzero(mesh.volumes < eps_vol)[0]
    if len(degenerate):
        raise DegenerateElement(f"{len(degenerate)} tets below volume {eps_vol:.3g}, first {degenerate[0]}")

    grads = basis_gradients(mesh)
    local = np.einsum("tik,tjk->tij", grads, grads) * mesh.volumes[:, None, None]
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    stiffness = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    stiffness.sum_duplicates()

    mass = np.bincount(mesh.tets.ravel(), weights=np.repeat(mesh.volumes / 4.0, 4), minlength=n)

    if isinstance(prob.f, SourceTerm) and prob.f.is_zero:
        rhs = np.zeros(n)
    else:
        rhs = -mass * prob.f(mesh.vertices)

    boundary_mask = mesh.boundary_vertex_mask
    dirichlet_values = np.zeros(n)
    dirichlet_values[boundary_mask] = prob.boundary_values(mesh.vertices[boundary_mask])
    logger.debug(f"Assembled {n} vertices, {mesh.n_tets} tets, {int(boundary_mask.sum())} boundary vertices")
    return FemSystem(mesh, stiffness, mass, rhs, boundary_mask, dirichlet_values)


def pcg(a: sparse.csr_matrix, b: np.ndarray, rtol: float = 1e-10, max_iterations: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """
    Jacobi-preconditioned conjugate gradients from a zero initial guess.

    Raises:
        NoConvergence: if ||r|| / ||b|| > rtol after max_iterations
    """
    n = len(b)
    if max_iterations is None:
        max_iterations = max(100, int(10 * np.sqrt(n)))
    x = np.zeros(n)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x, 0

    inv_diag = 1.0 / a.diagonal()
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for iteration in range(1, max_iterations + 1):
        ap = a @ p
        step = rz / (p @ ap)
        x += step * p
        r -= step * ap
        r_norm = np.linalg.norm(r)
        if r_norm <= rtol * b_norm:
            return x, iteration
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"CG stopped at relative residual {r_norm / b_norm:.3e} after {max_iterations} iterations")


def solve(system: FemSystem, rtol: float = 1e-10) -> Solution:
    """
    Solve the reduced SPD system; boundary values are the Dirichlet data.

    Raises:
        NoConvergence: after 10 * sqrt(dof) iterations without reaching rtol
    """
    a_ii, b, interior = system.reduced()
    values = system.dirichlet_values.copy()
    if len(interior):
        x, iterations = pcg(a_ii, b, rtol=rtol, max_iterations=max(100, int(10 * np.sqrt(len(interior)))))
        values[interior] = x
        logger.debug(f"CG converged in {iterations} iterations for {len(interior)} unknowns")
    return Solution(system.mesh, values)


def solve_problem(mesh: TetMesh, prob: PoissonProblem) -> Solution:
    """Assemble and solve; logs discrete maximum principle violations for f = 0"""
    system = assemble(mesh, prob)
    solution = solve(system)
    if isinstance(prob.f, SourceTerm) and prob.f.is_zero and system.boundary_mask.any():
        g = system.dirichlet_values[system.boundary_mask]
        slack = 1e-8 * max(1.0, float(np.abs(g).max()))
        if solution.values.min() < g.min() - slack or solution.values.max() > g.max() + slack:
            logger.warning(f"Discrete maximum principle violated for {prob.problem_id} on a {mesh.n_vertices}-vertex mesh")
    return solution


Reference = Union[Solution, Callable[[np.ndarray], np.ndarray], np.ndarray]


def _values_at(source: Reference, points: np.ndarray) -> np.ndarray:
    if isinstance(source, np.ndarray):
        if len(source) != len(points):
            raise ValueError("value array must have one entry per probe point")
        return source
    return np.asarray(source(points), dtype=float)


def relative_error(sol: Reference, ref: Reference, probe_points: np.ndarray, norm: NormKind = NormKind.L2) -> float:
    """
    Relative error of sol against ref over probe points.

    Both arguments may be a Solution, a callable of points, or an array of
    values already evaluated at the probe points.

    Raises:
        ZeroReference: if the reference norm is below 1e-14
    """
    probe_points = np.atleast_2d(probe_points)
    u = _values_at(sol, probe_points)
    u_ref = _values_at(ref, probe_points)
    if NormKind(norm) == NormKind.L2:
        diff, scale = np.linalg.norm(u - u_ref), np.linalg.norm(u_ref)
    else:
        diff, scale = np.max(np.abs(u - u_ref)), np.max(np.abs(u_ref))
    if scale < 1e-14:
        raise ZeroReference(f"reference {NormKind(norm).value} norm {scale:.3g} is too small")
    return float(diff / scale)


def h1_seminorm_error(sol: Solution, exact_gradient: Callable[[np.ndarray], np.ndarray]) -> float:
    """Centroid-quadrature estimate of |u - u_h|_{H^1}"""
    diff = sol.gradients() - exact_gradient(sol.mesh.centroids)
    return float(np.sqrt(np.sum(sol.mesh.volumes * np.sum(diff ** 2, axis=1))))
