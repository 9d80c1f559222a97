"""Variational time step: minimize W2^2(f, rho) + h^2 U(rho) over densities.

The discrete problem is convex in the node masses. It is solved in two
phases: an entropic scaling phase (log-domain Sinkhorn-like iterations in
which the rho-side update solves the pointwise first-order condition
g = -h^2 Theta1(rho) exactly), followed by an exact-LP polish phase that
drives the Kuhn-Tucker residual of the unregularized problem below
tolerance with damped fixed-point steps and a monotone line search.
"""

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from .kernels import lse_rows
from .mesh import Density
from .sphere_geom import exp_map, hessian_half_dsq, tangent_basis
from .energy import internal_energy, special_fisher
from . import ot


class JkoResult:
    """Minimizer of one variational step and its certificate data."""

    def __init__(self, rho_h, value, potentials, iterations, optimality_residual):
        self.rho_h = rho_h
        self.value = value
        self.potentials = potentials
        self.iterations = iterations
        self.optimality_residual = optimality_residual


class JkoConvergenceError(RuntimeError):
    """Raised when the residual tolerance is not met; carries best iterate."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def energy(rho, f, h, theta):
    """E(rho; f) = W2^2(f, rho) + h^2 U(rho), with exact transport."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    w2, _ = ot.w2_squared_exact(f, rho)
    return w2 + h * h * internal_energy(rho, theta)


def _rho_side_update(logs, eps, h, theta, weights):
    """Solve g + h^2 Theta1(exp(g/eps + logs) / w) = 0 nodewise.

    logs = log sum_i exp((f_i - C_ij)/eps); the root in g is unique because
    the left side is increasing and Theta1 is increasing on (0, inf).
    """
    h2 = h * h
    if theta.variant == "power":
        gam = theta.params["gamma"]
        c = theta.params["coeff"]
        A = h2 * c * gam * np.exp((gam - 1) * (logs - np.log(weights)))
        u = np.real(lambertw((gam - 1) * A / eps))
        return -eps * u / (gam - 1)
    if theta.variant == "log":
        return -h2 * (1.0 + logs - np.log(weights)) / (1.0 + h2 / eps)
    out = np.empty_like(logs)
    for j in range(len(logs)):
        def fun(g):
            return g + h2 * theta.theta1(np.exp(g / eps + logs[j]) / weights[j])
        lo, hi = -1.0, 0.0
        while fun(lo) > 0:
            lo *= 2
        out[j] = brentq(fun, lo, hi, xtol=1e-14)
    return out


def _chi_masses(v, mu, h, theta, weights):
    """Candidate masses from the stationarity condition
    rho_j = chi((-mu - v_j)/h^2), clipped to zero where the argument leaves
    the range of Theta1."""
    arg = (-mu - v) / (h * h)
    if theta.variant == "log":
        rho = theta.chi(arg)
    else:
        rho = np.where(arg > 0, theta.chi(np.maximum(arg, 1e-300)), 0.0)
    return weights * rho


def _project_candidate(v, h, theta, weights, total):
    """Bisect the multiplier so the candidate masses sum to the total mass."""
    lo, hi = -1.0, 1.0
    while np.sum(_chi_masses(v, lo, h, theta, weights)) < total:
        lo *= 2
        if lo < -1e12:
            raise RuntimeError("multiplier bracket failed (low side)")
    while np.sum(_chi_masses(v, hi, h, theta, weights)) > total:
        hi *= 2
        if hi > 1e12:
            raise RuntimeError("multiplier bracket failed (high side)")
    mu = brentq(lambda m: np.sum(_chi_masses(v, m, h, theta, weights)) - total,
                lo, hi, xtol=1e-15)
    return _chi_masses(v, mu, h, theta, weights)


def jko_step(f, h, theta, opts=None):
    """Minimize W2^2(f, rho) + h^2 U(rho) over probability densities.

    Returns a JkoResult whose optimality_residual is the complementarity
    gap sum_j m_j (g_j - min g) of the exact (unregularized) problem,
    where g = v + h^2 Theta1(rho) and v is an exact Kantorovich potential.
    """
    opts = dict(opts or {})
    reg = opts.get("reg", 1e-3)
    tol = opts.get("tol", 1e-7)
    max_iter = opts.get("max_iter", 3000)
    polish_iters = opts.get("polish_iters", 40)
    ls_alphas = tuple(opts.get("ls_alphas", (1.0, 0.5, 0.25, 0.1, 0.03)))
    mesh = f.mesh
    weights = mesh.weights
    a = f.values * weights
    if np.any(f.values <= 0):
        raise ValueError("jko_step requires a strictly positive prior density")
    if h == 0:
        rho_h = Density(mesh, f.values.copy())
        zero = np.zeros(mesh.n)
        return JkoResult(rho_h, 0.0, (zero, zero), 0, 0.0)

    # Phase 1: entropic scaling iterations in the log domain.
    C = ot.cost_matrix(mesh.nodes, mesh.nodes)
    Ct = np.ascontiguousarray(C.T)
    loga = np.log(a)
    fp = np.zeros(mesh.n)
    g = np.zeros(mesh.n)
    it = 0
    eps_list = list(np.geomspace(max(reg, np.max(C) / 10), reg, 6))
    for eps in eps_list:
        last = eps == eps_list[-1]
        for _ in range(max_iter if last else 60):
            it += 1
            fp = eps * loga - eps * lse_rows(
                np.ascontiguousarray((g[None, :] - C) / eps))
            logs = lse_rows(np.ascontiguousarray((fp[None, :] - Ct) / eps))
            gnew = _rho_side_update(logs, eps, h, theta, weights)
            delta = np.max(np.abs(gnew - g))
            g = gnew
            if delta < 1e-11:
                break
    m = np.exp(g / reg + logs)
    m *= np.sum(a) / np.sum(m)
    rho = np.maximum(m / weights, 1e-300)

    # Phase 2: exact-LP polish with damped stationarity steps. The exact
    # transport term is polyhedral, so its subdifferential (the Kantorovich
    # potential) is not unique at degenerate plans; the complementarity
    # residual therefore has a mesh-dependent floor. A stalled line search
    # at that floor counts as converged; the residual is reported as is.
    best = None
    val = None
    stalled = False
    for k in range(polish_iters + 1):
        value, _, _, v = ot.transport_lp(a, rho * weights, C)
        cur = value + h * h * internal_energy(
            Density(mesh, rho, normalize=True), theta)
        if val is None or cur < val:
            val = cur
        grad = v + h * h * theta.theta1(np.maximum(rho, 1e-300))
        residual = float(np.dot(rho * weights, grad - np.min(grad)))
        if best is None or residual < best[0]:
            best = (residual, rho.copy(), v.copy(), val, it + k)
        if residual < tol or k == polish_iters:
            break
        m_cand = _project_candidate(v, h, theta, weights, np.sum(a))
        rho_cand = np.maximum(m_cand / weights, 1e-12)
        stepped = False
        if np.dot(np.abs(rho_cand - rho), weights) < 1e-10:
            stalled = True
            break
        for alpha in ls_alphas:
            trial = (1 - alpha) * rho + alpha * rho_cand
            td = Density(mesh, trial, normalize=True)
            w2t, _ = ot.w2_squared_exact(f, td)
            et = w2t + h * h * internal_energy(td, theta)
            if et < val - 1e-14:
                rho = trial
                val = et
                stepped = True
                break
        if not stepped:
            stalled = True
            break

    residual, rho, v, val, iters = best
    rho_h = Density(mesh, rho, normalize=True)
    u = ot.c_transform(v, C)
    result = JkoResult(rho_h, float(val), (u, v), iters, residual)
    if residual > tol and polish_iters > 0 and not stalled:
        raise JkoConvergenceError(
            "first-order residual %.3e above tolerance %.3e with iteration "
            "budget exhausted" % (residual, tol), result)
    return result


def optimality_map_residual(result, f, h, theta):
    """W1 distance between the push-forward of rho_h under
    x -> exp_x(h^2 grad(Theta1 o rho_h)(x)) and the prior f."""
    rho_h = result.rho_h
    if h == 0:
        return 0.0
    mesh = rho_h.mesh
    W = h * h * mesh.gradient(theta.theta1(np.maximum(rho_h.values, 1e-300)))
    pushed = ot.push_forward_displacement(W, rho_h)
    return ot.w1_exact(pushed, f)


def minimizer_bounds_check(result, delta1, tol=0.005):
    """True iff the minimizer stays inside the prior's pointwise bounds,
    min rho_h >= delta1 - tol and max rho_h <= 1/delta1 + tol."""
    v = result.rho_h.values
    return bool(np.min(v) >= delta1 - tol and np.max(v) <= 1.0 / delta1 + tol)


def fisher_gap_check(f, result, h, theta):
    """Margin of the internal-energy decrease estimate:
    U(f) - U(rho_h) - h^2 * int rho_h |grad(Theta1 o rho_h)|^2.
    Expected nonnegative up to mesh and solver tolerance."""
    return (internal_energy(f, theta) - internal_energy(result.rho_h, theta)
            - h * h * special_fisher(result.rho_h, theta))


def jacobian_logconcavity_probe(mesh, phi0, phih, node, h, num=33, gamma=1.0,
                                hess0=None, hessh=None):
    """Second differences of s -> log det of the transported-Jacobian factor
    along the family exp_x((1-s) h grad(phi0) + s h^2 grad(phih)).

    The factor is (1/2) D^2 d^2(x, y)|_{y at parameter s} plus
    (1-s) h D^2 phi0 + s h^2 D^2 phih, all restricted to the tangent plane
    at x. Returns centered second differences divided by the step squared;
    nonpositive values (up to tolerance) certify log-concavity.

    Mesh Hessians are first-order accurate; pass analytic 2x2 Hessians in
    the node's tangent basis via hess0/hessh for tight tolerances.
    """
    phi0 = np.asarray(phi0, float)
    phih = np.asarray(phih, float)
    x = mesh.nodes[node]
    g0 = mesh.gradient(phi0)[node]
    gh = mesh.gradient(phih)[node]
    if h * np.linalg.norm(g0) + gamma * h * h * np.linalg.norm(gh) >= np.pi / 2:
        raise ValueError("displacement too large: h|grad phi0| + "
                         "gamma h^2|grad phih| must stay below pi/2")
    b1, b2 = tangent_basis(x)
    B = np.stack([b1, b2])

    def as22(H):
        if H is None:
            return np.zeros((2, 2))
        H = np.asarray(H, float)
        return H if H.shape == (2, 2) else B @ H @ B.T

    H0 = as22(hess0) if hess0 is not None else mesh.hessian(phi0)[node]
    Hh = as22(hessh) if hessh is not None else mesh.hessian(phih)[node]
    xi = h * g0
    zeta = h * h * gh - h * g0
    s_grid = np.linspace(0.0, 1.0, num)
    vals = np.empty(num)
    for i, s in enumerate(s_grid):
        w = xi + s * zeta
        if np.linalg.norm(w) < 1e-14:
            M2 = np.eye(2)
        else:
            y = exp_map(x, w)
            Hd = hessian_half_dsq(x, y).matrix
            M2 = B @ Hd @ B.T
        M2 = M2 + (1 - s) * h * H0 + s * h * h * Hh
        sign, logdet = np.linalg.slogdet(M2)
        if sign <= 0:
            raise ValueError("Jacobian factor lost positivity at s = %g" % s)
        vals[i] = logdet
    ds = s_grid[1] - s_grid[0]
    return (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / ds ** 2
