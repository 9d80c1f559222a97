"""Poisson solves and Hodge-Helmholtz decompositions on the sphere.

The unweighted route uses the closed-form Green's function
G(a) = (4 pi)^-1 log(1 - cos a) applied by dense quadrature, with the
singular self-cell replaced by its cap average. The density-weighted
route solves the finite-element system for the bilinear form
integral(rho grad phi . grad g), whose nullspace is exactly the constants.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .kernels import pairwise_dist


class HelmholtzParts:
    """Result of a Hodge-Helmholtz split V = grad q + X x grad psi + residual."""

    def __init__(self, q, psi, residual):
        self.q = q
        self.psi = psi
        self.residual = residual


def greens_function(angle):
    """G(a) = (4 pi)^-1 log(1 - cos a); inverts the Laplacian on zero-mean data."""
    a = np.asarray(angle, float)
    if np.any(a <= 0) or np.any(a > np.pi):
        raise ValueError("angle must lie in (0, pi]")
    out = np.log(1.0 - np.cos(a)) / (4 * np.pi)
    return out if out.ndim else float(out)


def greens_matrix(mesh):
    """Dense quadrature kernel G(d(x_i, x_j)) w_j with cap-averaged diagonal.

    The self-cell of area w has cap average (4 pi)^-1 (log(w / (2 pi)) - 1)
    for small caps, which desingularizes the log kernel consistently.
    """
    D = pairwise_dist(np.ascontiguousarray(mesh.nodes), np.ascontiguousarray(mesh.nodes))
    np.fill_diagonal(D, 1.0)
    G = np.log(1.0 - np.cos(D)) / (4 * np.pi)
    diag = (np.log(mesh.weights / (2 * np.pi)) - 1.0) / (4 * np.pi)
    np.fill_diagonal(G, diag)
    return G * mesh.weights[None, :]


_greens_cache = {}


def _greens(mesh):
    key = id(mesh)
    if key not in _greens_cache:
        _greens_cache[key] = greens_matrix(mesh)
    return _greens_cache[key]


def solve_poisson(mesh, g, warn=None):
    """Solve Laplacian(u) = g for zero-mean u by Green's-function quadrature.

    g is projected to zero mean if needed (it must be, for solvability)."""
    g = np.asarray(g, float)
    mean = mesh.integrate(g) / (4 * np.pi)
    if abs(mean) > 1e-10 and warn is not None:
        warn("source projected to zero mean (mean was %.3e)" % mean)
    g = g - mean
    u = _greens(mesh) @ g
    return u - mesh.integrate(u) / (4 * np.pi)


def helmholtz_decompose(mesh, V):
    """Split a tangential field into gradient + rotational + residual parts:
    V = grad q + X x grad psi + residual, with zero-mean q and psi."""
    V = mesh.project_tangent(np.asarray(V, float))
    q = solve_poisson(mesh, mesh.divergence(V))
    psi = -solve_poisson(mesh, mesh.divergence(np.cross(mesh.nodes, V)))
    recon = mesh.gradient(q) + np.cross(mesh.nodes, mesh.gradient(psi))
    return HelmholtzParts(q, psi, V - recon)


def weighted_decompose(mesh, V, rho, tol=1e-10):
    """Density-weighted Helmholtz split V = grad phi + w.

    phi solves the weak system integral(rho grad phi . grad g) =
    integral(rho V . grad g) for all g, by conjugate gradients with the
    constant nullspace deflated; w = V - grad phi satisfies the weighted
    divergence-free property in the same weak sense.
    """
    vals = rho.values if hasattr(rho, "values") else np.asarray(rho, float)
    if np.any(vals <= 0):
        raise ValueError("weighted decomposition requires a strictly positive density")
    V = mesh.project_tangent(np.asarray(V, float))
    K = mesh.weighted_stiffness(vals)
    rhs = mesh.weighted_load(V, vals)
    rhs = rhs - rhs.mean()
    ilu_diag = K.diagonal()
    M = sp.diags(1.0 / ilu_diag)
    phi, info = spl.cg(K, rhs, rtol=tol, atol=0.0, maxiter=5000, M=M)
    if info != 0:
        raise RuntimeError("conjugate gradients did not converge (info=%d)" % info)
    phi = phi - mesh.integrate(phi) / (4 * np.pi)
    return phi, V - mesh.gradient(phi)


def spectral_gap_estimate(mesh, rho):
    """Smallest nonzero eigenvalue of the rho-weighted Laplacian pencil
    (the best constant in the weighted Poincare inequality).

    For the uniform density this converges to 2, the gap of the
    Laplace-Beltrami operator on the unit sphere.
    """
    vals = rho.values if hasattr(rho, "values") else np.asarray(rho, float)
    if np.any(vals <= 0):
        raise ValueError("spectral gap requires a strictly positive density")
    K = mesh.weighted_stiffness(vals)
    mass = mesh.weights * vals
    d = 1.0 / np.sqrt(mass)
    B = (sp.diags(d) @ K @ sp.diags(d)).tocsc()
    eigs = spl.eigsh(B, k=2, sigma=-0.01, which="LM", return_eigenvectors=False)
    return float(np.sort(eigs)[1])
