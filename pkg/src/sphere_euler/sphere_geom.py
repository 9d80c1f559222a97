"""Closed-form differential geometry of the unit sphere S^2.

Exponential and logarithm maps, geodesic distance, the Hessian of d^2/2,
parallel transport, geodesic-interpolant families, and Serret-Frenet
curvature data estimated from sampled trajectories.

Points are unit 3-vectors; tangent vectors at x are 3-vectors orthogonal
to x. Operations accept single vectors (shape (3,)) or batches (n, 3).
"""

import numpy as np

TANGENCY_TOL = 1e-6
CUT_LOCUS_TOL = 1e-9


class SpherePoint:
    """A point on the unit sphere, renormalized on construction."""

    def __init__(self, coords):
        coords = np.asarray(coords, dtype=float)
        nrm = np.linalg.norm(coords)
        if abs(nrm - 1.0) > TANGENCY_TOL:
            raise ValueError("point is too far from the unit sphere: |x| = %g" % nrm)
        self.coords = coords / nrm


class TangentVector:
    """A tangent vector attached to a base point; re-projected on construction."""

    def __init__(self, base, vec):
        base = base.coords if isinstance(base, SpherePoint) else np.asarray(base, float)
        vec = np.asarray(vec, dtype=float)
        base = base / np.linalg.norm(base)
        drift = abs(base @ vec)
        if drift > TANGENCY_TOL * max(1.0, np.linalg.norm(vec)):
            raise ValueError("vector is not tangent: |x.v| = %g" % drift)
        self.base = base
        self.vec = vec - (base @ vec) * base

    @property
    def norm(self):
        return np.linalg.norm(self.vec)


class FrenetFrame:
    """Orthonormal frame and curvature data of a spherical curve sample."""

    def __init__(self, tangent, normal_n, binormal, kappa_n, kappa_g, kappa):
        self.tangent = tangent
        self.normal_n = normal_n
        self.binormal = binormal
        self.kappa_n = kappa_n
        self.kappa_g = kappa_g
        self.kappa = kappa


class HessianOperator:
    """Symmetric bilinear form on the tangent plane at a base point."""

    def __init__(self, base, matrix):
        self.base = np.asarray(base, float)
        m = np.asarray(matrix, float)
        # symmetrize and remove any normal component
        m = 0.5 * (m + m.T)
        P = np.eye(3) - np.outer(self.base, self.base)
        self.matrix = P @ m @ P

    def quadratic_form(self, v):
        v = np.asarray(v, float)
        return v @ self.matrix @ v

    def tangent_eigenvalues(self):
        """Eigenvalues restricted to the 2-dim tangent plane."""
        vals = np.linalg.eigvalsh(self.matrix + np.outer(self.base, self.base))
        # the +x x^T shifts the normal null direction to eigenvalue 1; remove it
        # by recomputing in an explicit tangent basis instead
        b1, b2 = tangent_basis(self.base)
        M2 = np.array([[b1 @ self.matrix @ b1, b1 @ self.matrix @ b2],
                       [b2 @ self.matrix @ b1, b2 @ self.matrix @ b2]])
        return np.linalg.eigvalsh(M2)


def _check_tangent(x, w):
    dot = np.sum(x * w, axis=-1)
    scale = np.maximum(1.0, np.linalg.norm(w, axis=-1))
    if np.any(np.abs(dot) > TANGENCY_TOL * scale):
        raise ValueError("vector is not tangent to the sphere at its base point")


def tangent_basis(x):
    """An orthonormal pair (b1, b2) spanning the tangent plane at x."""
    x = np.asarray(x, float)
    # pick the coordinate axis least aligned with x
    a = np.zeros(3)
    a[np.argmin(np.abs(x))] = 1.0
    b1 = a - (a @ x) * x
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(x, b1)
    return b1, b2


def exp_map(x, w):
    """Geodesic exponential: exp_x(w) = x cos|w| + (w/|w|) sin|w|."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    _check_tangent(x, w)
    t = np.linalg.norm(w, axis=-1, keepdims=True)
    small = t < 1e-300
    direction = np.where(small, 0.0, w / np.where(small, 1.0, t))
    out = x * np.cos(t) + direction * np.sin(t)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def distance(x, y):
    """Geodesic distance arccos(x . y), in [0, pi]."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.arccos(np.clip(np.sum(x * y, axis=-1), -1.0, 1.0))


def log_map(x, y):
    """Inverse of exp_map: the tangent vector at x pointing to y.

    Raises for (near-)antipodal pairs, where the direction is not unique.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    c = np.clip(np.sum(x * y, axis=-1), -1.0, 1.0)
    theta = np.arccos(c)
    if np.any(theta > np.pi - CUT_LOCUS_TOL):
        raise ValueError("log_map is undefined at the cut locus (antipodal points)")
    perp = y - c[..., None] * x
    nrm = np.linalg.norm(perp, axis=-1)
    safe = np.maximum(nrm, 1e-300)
    return (theta / safe)[..., None] * perp


def parallel_transport(x, y, v):
    """Parallel transport of tangent vector v at x to y along the geodesic."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    w = log_map(x, y)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < 1e-14
    safe = np.where(small, 1.0, theta)
    u = w / safe[..., None]
    a = np.sum(v * u, axis=-1)[..., None]
    rotated = a * (np.cos(theta)[..., None] * u - np.sin(theta)[..., None] * x)
    out = rotated + (v - a * u)
    return np.where(small[..., None], v, out)


def hessian_half_dsq(x, y):
    """Hessian in x of d(x, y)^2 / 2 as an operator on the tangent plane.

    With tau = d(x, y) and eta the unit vector along log_map(x, y), the
    quadratic form is (1 - tau*cot(tau)) (eta.v)^2 + tau*cot(tau) (v.v);
    eigenvalues {1, tau*cot(tau)}, determinant tau*cot(tau).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    tau = distance(x, y)
    if tau > np.pi - CUT_LOCUS_TOL:
        raise ValueError("Hessian of d^2/2 is undefined at the cut locus")
    P = np.eye(3) - np.outer(x, x)
    if tau < 1e-9:
        return HessianOperator(x, P)
    eta = log_map(x, y) / tau
    tc = tau * np.cos(tau) / np.sin(tau)
    M = (1.0 - tc) * np.outer(eta, eta) + tc * P
    return HessianOperator(x, M)


def jacobian_det_tau_cot(tau):
    """tau * cot(tau), the determinant of the d^2/2 Hessian, on [0, pi/2)."""
    tau = np.asarray(tau, float)
    if np.any(tau < 0) or np.any(tau >= np.pi / 2):
        raise ValueError("tau must lie in [0, pi/2)")
    out = np.where(tau < 1e-12, 1.0, tau * np.cos(tau) / np.sin(np.where(tau < 1e-12, 1.0, tau)))
    return out if out.ndim else float(out)


def jacobi_interpolant(x, xi, zeta, s):
    """The family F(s) = exp_x(xi + s*zeta) joining exp_x(xi) to exp_x(xi+zeta)."""
    w = np.asarray(xi, float) + s * np.asarray(zeta, float)
    if np.any(np.linalg.norm(w, axis=-1) >= np.pi):
        raise ValueError("interpolant leaves the injectivity radius")
    return exp_map(x, w)


def frenet_from_samples(times, points):
    """Curvature data of a sampled spherical curve by finite differences.

    Returns a dict with per-sample arrays: sdot, sddot, kappa_n, kappa_g,
    kappa, and frames (list of FrenetFrame). Requires >= 5 samples and
    nonvanishing speed.
    """
    times = np.asarray(times, float)
    X = np.asarray(points, float)
    if len(times) < 5:
        raise ValueError("need at least 5 samples")
    Xd = np.gradient(X, times, axis=0)
    Xdd = np.gradient(Xd, times, axis=0)
    sdot = np.linalg.norm(Xd, axis=1)
    if np.any(sdot < 1e-12):
        raise ValueError("stationary trajectory: speed vanishes")
    sddot = np.gradient(sdot, times)
    T = Xd / sdot[:, None]
    kappa_n = np.einsum("ij,ij->i", Xdd, X) / sdot**2
    side = np.cross(X, T)
    kappa_g = np.einsum("ij,ij->i", Xdd, side) / sdot**2
    kappa = np.sqrt(kappa_n**2 + kappa_g**2)
    frames = []
    for i in range(len(times)):
        a_perp = Xdd[i] - (Xdd[i] @ T[i]) * T[i]
        n = np.linalg.norm(a_perp)
        N = a_perp / n if n > 1e-12 else -X[i]
        frames.append(FrenetFrame(T[i], N, np.cross(T[i], N),
                                  kappa_n[i], kappa_g[i], kappa[i]))
    return {"sdot": sdot, "sddot": sddot, "kappa_n": kappa_n,
            "kappa_g": kappa_g, "kappa": kappa, "frames": frames}


def random_point(rng):
    """Uniform random point on the sphere."""
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def random_tangent(rng, x, scale=1.0):
    """Random tangent vector at x with entries at the given scale."""
    v = rng.standard_normal(3) * scale
    v -= (v @ x) * x
    return v
