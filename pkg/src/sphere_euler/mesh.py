"""Icosphere discretization of S^2 with quadrature weights and discrete
differential operators.

Nodes come from recursive subdivision of the icosahedron projected to the
sphere (10*4^s + 2 nodes at subdivision level s). Quadrature weights are
dual-cell areas (each spherical triangle contributes a third of its area to
each corner). Gradients are per-node least-squares fits in the tangent
plane over the one-ring stencil; divergence is the exact negative adjoint
of the gradient under the quadrature pairing, which makes the discrete
Laplacian a symmetric positive-semidefinite pencil.
"""

import hashlib
import io

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import sphere_geom as sg
from .kernels import pairwise_dist

MASS_TOL = 1e-10


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=int)
    return verts, faces


def _subdivide(verts, faces):
    verts = list(verts)
    midpoint = {}

    def mid(i, j):
        key = (min(i, j), max(i, j))
        if key not in midpoint:
            v = verts[i] + verts[j]
            v = v / np.linalg.norm(v)
            midpoint[key] = len(verts)
            verts.append(v)
        return midpoint[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(new_faces, dtype=int)


def _spherical_triangle_area(a, b, c):
    """Area via l'Huilier's theorem (vectorized over leading axes)."""
    sa = np.arccos(np.clip(np.sum(b * c, axis=-1), -1, 1))
    sb = np.arccos(np.clip(np.sum(a * c, axis=-1), -1, 1))
    sc = np.arccos(np.clip(np.sum(a * b, axis=-1), -1, 1))
    s = 0.5 * (sa + sb + sc)
    t = np.tan(s / 2) * np.tan((s - sa) / 2) * np.tan((s - sb) / 2) * np.tan((s - sc) / 2)
    return 4.0 * np.arctan(np.sqrt(np.maximum(t, 0.0)))


class Mesh:
    """Immutable icosphere mesh with quadrature and differential operators."""

    def __init__(self, nodes, weights, stencils, triangles=None):
        self.nodes = np.asarray(nodes, float)
        self.weights = np.asarray(weights, float)
        self.stencils = [np.asarray(s, int) for s in stencils]
        self.triangles = triangles
        self.n = len(self.nodes)
        if abs(self.weights.sum() - 4 * np.pi) > 1e-6:
            raise ValueError("quadrature weights do not sum to 4*pi")
        if any(len(s) < 5 for s in self.stencils):
            raise ValueError("every node needs at least 5 neighbors")
        self.tangent_bases = np.empty((self.n, 2, 3))
        for i in range(self.n):
            b1, b2 = sg.tangent_basis(self.nodes[i])
            self.tangent_bases[i, 0] = b1
            self.tangent_bases[i, 1] = b2
        self._build_gradient_operators()
        self._tree = cKDTree(self.nodes)
        nn = self._tree.query(self.nodes, k=2)[0][:, 1]
        self.spacing = float(np.mean(2 * np.arcsin(nn / 2)))

    # -- construction ------------------------------------------------------

    @property
    def checksum(self):
        h = hashlib.sha256()
        h.update(np.round(self.nodes, 12).tobytes())
        h.update(np.round(self.weights, 12).tobytes())
        return h.hexdigest()[:16]

    def _build_gradient_operators(self):
        """Least-squares gradient matrices A1, A2 (components in the node's
        tangent basis), including quadratic terms for second-order accuracy."""
        rows, cols, vals1, vals2 = [], [], [], []
        for i in range(self.n):
            nbrs = self.stencils[i]
            xi = sg.log_map(self.nodes[i], self.nodes[nbrs])
            P = xi @ self.tangent_bases[i].T  # (k, 2) local coordinates
            k = len(nbrs)
            V = np.column_stack([
                P[:, 0], P[:, 1],
                0.5 * P[:, 0] ** 2, P[:, 0] * P[:, 1], 0.5 * P[:, 1] ** 2,
            ])
            ncols = 5 if k >= 5 else 2
            M = np.linalg.pinv(V[:, :ncols], rcond=1e-10)[:2]  # (2, k)
            rows += [i] * (k + 1)
            cols += list(nbrs) + [i]
            vals1 += list(M[0]) + [-M[0].sum()]
            vals2 += list(M[1]) + [-M[1].sum()]
        shape = (self.n, self.n)
        self.A1 = sp.csr_matrix((vals1, (rows, cols)), shape=shape)
        self.A2 = sp.csr_matrix((vals2, (rows, cols)), shape=shape)
        if self.triangles is not None:
            self._build_fem()

    def _build_fem(self):
        """Per-face hat-function gradients for finite-element assembly.

        Each flat triangle carries constant gradients of its three nodal hat
        functions; these assemble the symmetric positive-semidefinite
        stiffness matrix used for spectral estimates and weighted solves
        (nullspace exactly the constants, no spurious low modes).
        """
        tri = self.triangles
        p0, p1, p2 = (self.nodes[tri[:, c]] for c in range(3))
        nrm = np.cross(p1 - p0, p2 - p0)
        dbl = np.linalg.norm(nrm, axis=1)  # twice the flat area
        self.face_areas = 0.5 * dbl
        nhat = nrm / dbl[:, None]
        # gradient of hat_i = (nhat x opposite_edge) / (2 A)
        gl = np.empty((len(tri), 3, 3))
        gl[:, 0] = np.cross(nhat, p2 - p1) / dbl[:, None]
        gl[:, 1] = np.cross(nhat, p0 - p2) / dbl[:, None]
        gl[:, 2] = np.cross(nhat, p1 - p0) / dbl[:, None]
        self.face_grads = gl
        self.stiffness = self.weighted_stiffness(np.ones(self.n)).tocsr()

    def weighted_stiffness(self, rho_values):
        """FEM assembly of the bilinear form integral(rho grad f . grad g)."""
        if self.triangles is None:
            raise ValueError("mesh has no triangulation; FEM operators unavailable")
        tri = self.triangles
        rho_f = np.mean(np.asarray(rho_values, float)[tri], axis=1)
        scale = rho_f * self.face_areas
        rows, cols, vals = [], [], []
        for a in range(3):
            for b in range(3):
                rows.append(tri[:, a])
                cols.append(tri[:, b])
                vals.append(scale * np.einsum("ij,ij->i", self.face_grads[:, a],
                                              self.face_grads[:, b]))
        return sp.csr_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))

    def weighted_load(self, V, rho_values):
        """FEM load vector integral(rho V . grad hat_i) for a vector field V."""
        if self.triangles is None:
            raise ValueError("mesh has no triangulation; FEM operators unavailable")
        tri = self.triangles
        V = np.asarray(V, float)
        Vf = np.mean(V[tri], axis=1)  # (nf, 3)
        rho_f = np.mean(np.asarray(rho_values, float)[tri], axis=1)
        scale = rho_f * self.face_areas
        out = np.zeros(self.n)
        for a in range(3):
            np.add.at(out, tri[:, a],
                      scale * np.einsum("ij,ij->i", Vf, self.face_grads[:, a]))
        return out

    # -- quadrature and fields ---------------------------------------------

    def integrate(self, values):
        return float(np.dot(np.asarray(values, float), self.weights))

    def gradient(self, field):
        """Tangential gradient of a per-node scalar field, as (n, 3) vectors."""
        f = np.asarray(field, float)
        g1 = self.A1 @ f
        g2 = self.A2 @ f
        return g1[:, None] * self.tangent_bases[:, 0] + g2[:, None] * self.tangent_bases[:, 1]

    def to_components(self, V):
        """Project an (n, 3) field onto the per-node tangent bases -> (n, 2)."""
        V = np.asarray(V, float)
        return np.stack([np.einsum("ij,ij->i", V, self.tangent_bases[:, 0]),
                         np.einsum("ij,ij->i", V, self.tangent_bases[:, 1])], axis=1)

    def project_tangent(self, V):
        V = np.asarray(V, float)
        return V - np.einsum("ij,ij->i", V, self.nodes)[:, None] * self.nodes

    def divergence(self, V):
        """Discrete divergence: sum over the tangent frame of the frame
        component of the directional derivative (consistent pointwise; the
        quadrature pairing with gradient is adjoint up to mesh order)."""
        V = np.asarray(V, float)
        d1 = np.stack([self.A1 @ V[:, c] for c in range(3)], axis=1)
        d2 = np.stack([self.A2 @ V[:, c] for c in range(3)], axis=1)
        b = self.tangent_bases
        return (np.einsum("ij,ij->i", d1, b[:, 0]) +
                np.einsum("ij,ij->i", d2, b[:, 1]))

    def curl_normal(self, V):
        """Normal component of the curl: div(V x X)."""
        return self.divergence(np.cross(V, self.nodes))

    def laplacian(self, field):
        """Laplace-Beltrami approximation div(grad(field)); spectrum <= 0."""
        return self.divergence(self.gradient(field))

    def hessian(self, field):
        """Per-node 2x2 Hessians in the tangent bases (gradient of gradient).

        First-order accurate; adequate for tolerance budgets and guards.
        """
        G = self.gradient(field)
        d1 = np.stack([self.A1 @ G[:, c] for c in range(3)], axis=1)  # (n, 3)
        d2 = np.stack([self.A2 @ G[:, c] for c in range(3)], axis=1)
        H = np.empty((self.n, 2, 2))
        b = self.tangent_bases
        H[:, 0, 0] = np.einsum("ij,ij->i", d1, b[:, 0])
        H[:, 0, 1] = np.einsum("ij,ij->i", d1, b[:, 1])
        H[:, 1, 0] = np.einsum("ij,ij->i", d2, b[:, 0])
        H[:, 1, 1] = np.einsum("ij,ij->i", d2, b[:, 1])
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))

    def hessian_sup_norm(self, field):
        H = self.hessian(field)
        return float(np.max(np.abs(np.linalg.eigvalsh(H))))

    # -- interpolation / deposition ----------------------------------------

    def interp_weights(self, points, k=6):
        """Moment-matching interpolation weights at off-node points.

        For each point p, finds the k nearest nodes and the minimal-norm
        weights lam with sum(lam) = 1 and sum(lam * x_j) = p exactly, so
        interpolation (and the transposed deposition) is exact for constants
        and all linear functions of the ambient coordinates. Returns
        (indices (m, k), lam (m, k)).
        """
        pts = np.atleast_2d(np.asarray(points, float))
        _, idx = self._tree.query(pts, k=k)
        nb = self.nodes[idx]  # (m, k, 3)
        A = np.concatenate([np.ones((len(pts), 1, k)), np.transpose(nb, (0, 2, 1))], axis=1)
        b = np.concatenate([np.ones((len(pts), 1)), pts], axis=1)
        AAt = A @ np.transpose(A, (0, 2, 1))
        lam = np.einsum("mkr,mr->mk", np.transpose(A, (0, 2, 1)),
                        np.linalg.solve(AAt, b[:, :, None])[:, :, 0])
        return idx, lam

    def interpolate(self, field, points):
        """Interpolate per-node scalar or vector data at arbitrary points."""
        f = np.asarray(field, float)
        idx, lam = self.interp_weights(points)
        return np.einsum("mk,mk...->m...", lam, f[idx])

    def deposit(self, points, masses):
        """Deposit point masses onto nodes with the transposed interpolation
        weights; returns per-node masses (total preserved exactly)."""
        idx, lam = self.interp_weights(points)
        out = np.zeros(self.n)
        np.add.at(out, idx.ravel(), (lam * np.asarray(masses, float)[:, None]).ravel())
        return out

    def mollify_matrix(self, eps):
        """Row-normalized rotation-invariant smoothing operator of width eps."""
        D = pairwise_dist(self.nodes, self.nodes)
        K = np.exp(-0.5 * (D / eps) ** 2)
        K[D > 4 * eps] = 0.0
        K *= self.weights[None, :]
        K /= K.sum(axis=1, keepdims=True)
        return K

    # -- serialization ------------------------------------------------------

    def export_text(self):
        """Columnar text format: `node_id x y z weight` lines, then stencil
        lines `s node_id n1 n2 ...`."""
        buf = io.StringIO()
        for i in range(self.n):
            x, y, z = self.nodes[i]
            buf.write("%d %.17g %.17g %.17g %.17g\n" % (i, x, y, z, self.weights[i]))
        for i in range(self.n):
            buf.write("s %d %s\n" % (i, " ".join(str(j) for j in self.stencils[i])))
        return buf.getvalue()

    @classmethod
    def import_text(cls, text):
        nodes, weights, stencils = [], [], {}
        for line in text.strip().splitlines():
            parts = line.split()
            if parts[0] == "s":
                stencils[int(parts[1])] = [int(p) for p in parts[2:]]
            else:
                nodes.append([float(parts[1]), float(parts[2]), float(parts[3])])
                weights.append(float(parts[4]))
        sten = [stencils[i] for i in range(len(nodes))]
        return cls(np.array(nodes), np.array(weights), sten)


_mesh_cache = {}


def build_icosphere(subdivisions):
    """Icosphere mesh with 10*4^s + 2 nodes and dual-cell quadrature weights."""
    if not 0 <= subdivisions <= 7:
        raise ValueError("subdivisions must be in [0, 7]")
    if subdivisions in _mesh_cache:
        return _mesh_cache[subdivisions]
    verts, faces = _icosahedron()
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
    areas = _spherical_triangle_area(verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]])
    weights = np.zeros(len(verts))
    for c in range(3):
        np.add.at(weights, faces[:, c], areas / 3.0)
    nbrs = [set() for _ in range(len(verts))]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    stencils = [sorted(s) for s in nbrs]
    m = Mesh(verts, weights, stencils, triangles=faces)
    _mesh_cache[subdivisions] = m
    return m


class Density:
    """Nonnegative per-node values integrating to 1 against the mesh weights."""

    def __init__(self, mesh, values, normalize=False):
        self.mesh = mesh
        v = np.asarray(values, float).copy()
        if normalize:
            v = np.clip(v, 0.0, None)
            v /= np.dot(v, mesh.weights)
        if np.any(v < -1e-14):
            raise ValueError("density has negative values")
        v = np.clip(v, 0.0, None)
        mass = np.dot(v, mesh.weights)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError("density mass %.3e is not 1" % mass)
        self.values = v

    @classmethod
    def uniform(cls, mesh):
        return cls(mesh, np.full(mesh.n, 1.0 / (4 * np.pi)), normalize=True)

    def mass(self):
        return self.mesh.integrate(self.values)


def mollify(rho, eps):
    """Rotation-invariant smoothing of a density; mass renormalized."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    K = rho.mesh.mollify_matrix(eps)
    return Density(rho.mesh, K @ rho.values, normalize=True)
