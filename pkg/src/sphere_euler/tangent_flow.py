"""Phase-space dynamics on the tangent bundle of the sphere.

Particles carry a position X on the sphere and a tangent velocity V. The
ambient equation of motion is X'' = g(X) with a forcing that always
contains the constraining normal term -X; covariantly this reads
DV/dt = (tangential part of g). The discrete step is an implicit
trapezoid rule written with parallel transport, which is exact for
unforced great-circle motion at any step size and globally second order
otherwise. The same dynamics can be evaluated through the rotation-kernel
integral equation, where the normal constraint is absorbed into an exact
2x2 rotation block acting on (X, V) pairs.
"""

import numpy as np

from . import sphere_geom as sg
from . import ot

FIXED_POINT_TOL = 1e-12
MAX_FIXED_POINT = 25


class PhasePoint:
    """Position on the sphere plus tangent velocity, projected on entry."""

    def __init__(self, X, V):
        X = np.asarray(X, float)
        V = np.asarray(V, float)
        X = X / np.linalg.norm(X, axis=-1, keepdims=True)
        V = V - np.sum(X * V, axis=-1, keepdims=True) * X
        self.X = X
        self.V = V


class TrajectoryBundle:
    """Uniformly sampled time series of phase points for a particle set."""

    def __init__(self, times, X, V, labels=None):
        self.times = np.asarray(times, float)
        self.X = np.asarray(X, float)          # (nt, npart, 3)
        self.V = np.asarray(V, float)
        self.labels = labels
        if len(self.times) != len(self.X):
            raise ValueError("times and samples disagree in length")

    @property
    def h(self):
        return float(self.times[1] - self.times[0])


class TangentCostReport:
    """Per-particle phase-space action and its transport lower bounds."""

    def __init__(self, per_particle, aggregate, w2_term, curvature_term):
        self.per_particle = per_particle
        self.aggregate = aggregate
        self.w2_term = w2_term
        self.curvature_term = curvature_term


def project_phase(X, V):
    """Renormalize positions and strip normal velocity components."""
    X = np.asarray(X, float)
    V = np.asarray(V, float)
    X = X / np.linalg.norm(X, axis=-1, keepdims=True)
    V = V - np.sum(X * V, axis=-1, keepdims=True) * X
    return X, V


def _tangential(X, G):
    return G - np.sum(X * G, axis=-1, keepdims=True) * X


def step_predictor(state, h, g_eval):
    """One implicit trapezoid step of X'' = g(X), solved by fixed point.

    Works on single phase points or batches. The update is
        X1 = exp_X((h/2)(V + transport of V1 back to X)),
        V1 = transport of (V + (h/2) gT(X)) to X1, plus (h/2) gT(X1),
    with gT the tangential part of the forcing; the normal part is the
    sphere constraint and is handled exactly by the transport. Unforced
    unit-speed motion (g = -X) reproduces the great circle exactly.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    single = isinstance(state, PhasePoint) and state.X.ndim == 1
    X0 = np.atleast_2d(state.X)
    V0 = np.atleast_2d(state.V)
    gT0 = _tangential(X0, np.atleast_2d(np.asarray(g_eval(X0 if not single else X0), float)))
    X1, V1 = X0.copy(), V0.copy()
    for _ in range(MAX_FIXED_POINT):
        Vback = np.where(
            (np.sum(X0 * X1, axis=-1) > 1.0 - 1e-15)[:, None],
            V1, _transport_rows(X1, X0, V1))
        w = 0.5 * h * (V0 + Vback)
        w = _tangential(X0, w)
        X1n = sg.exp_map(X0, w)
        gT1 = _tangential(X1n, np.atleast_2d(np.asarray(g_eval(X1n), float)))
        carried = np.where(
            (np.sum(X0 * X1n, axis=-1) > 1.0 - 1e-15)[:, None],
            V0 + 0.5 * h * gT0,
            _transport_rows(X0, X1n, V0 + 0.5 * h * gT0))
        V1n = carried + 0.5 * h * gT1
        res = np.max(np.abs(X1n - X1)) + np.max(np.abs(V1n - V1))
        X1, V1 = X1n, V1n
        if res < FIXED_POINT_TOL:
            break
    else:
        raise RuntimeError("implicit step fixed point did not converge "
                           "(residual %.3e)" % res)
    X1, V1 = project_phase(X1, V1)
    if single:
        return PhasePoint(X1[0], V1[0])
    return PhasePoint(X1, V1)


def _transport_rows(A, B, W):
    """Row-wise parallel transport that tolerates coincident endpoints."""
    out = np.empty_like(W)
    same = np.sum(A * B, axis=-1) > 1.0 - 1e-15
    if np.any(same):
        out[same] = W[same]
    rest = ~same
    if np.any(rest):
        out[rest] = sg.parallel_transport(A[rest], B[rest], W[rest])
    return out


def integrate_predictor(state, h, n_steps, g_eval):
    """March the implicit trapezoid step; returns a TrajectoryBundle."""
    X0 = np.atleast_2d(state.X)
    V0 = np.atleast_2d(state.V)
    cur = PhasePoint(X0, V0)
    Xs = [cur.X.copy()]
    Vs = [cur.V.copy()]
    for _ in range(n_steps):
        cur = step_predictor(cur, h, g_eval)
        Xs.append(cur.X.copy())
        Vs.append(cur.V.copy())
    times = h * np.arange(n_steps + 1)
    return TrajectoryBundle(times, np.array(Xs), np.array(Vs))


def integrate_integral_equation(initial, pressure_grad, tau, dt):
    """March the rotation-kernel integral equation
        [X; V](t) = R(t) [X0; V0] + int_0^t R(t - u) [0; F(u, X(u))] du,
    where R(t) rotates each (X_c, V_c) coordinate pair by angle t and
    F(u, x) = -grad(Theta1 o p_u)(x) is supplied by pressure_grad(u, x).

    Trapezoid predictor-corrector on the accumulated integral; exact for
    zero forcing. Returns a TrajectoryBundle.
    """
    X0 = np.atleast_2d(initial.X)
    V0 = np.atleast_2d(initial.V)
    n_steps = int(round(tau / dt))
    if abs(n_steps * dt - tau) > 1e-12 * max(1.0, tau):
        raise ValueError("tau must be an integer multiple of dt")

    def rot(S, t):
        X, V = S
        c, s = np.cos(t), np.sin(t)
        return (c * X + s * V, -s * X + c * V)

    def forcing(t, X):
        Xn = X / np.linalg.norm(X, axis=-1, keepdims=True)
        G = np.atleast_2d(np.asarray(pressure_grad(t, Xn), float))
        return _tangential(Xn, G)

    S0 = (X0.copy(), V0.copy())
    I = (np.zeros_like(X0), np.zeros_like(V0))
    Xs, Vs = [X0.copy()], [V0.copy()]
    X_t = X0.copy()
    B_t = forcing(0.0, X_t)
    for k in range(n_steps):
        t = k * dt
        # integrand at current time, rotated back to t = 0
        zero = np.zeros_like(B_t)
        base = rot((zero, B_t), -t)
        # predictor state at t + dt
        Ip = (I[0] + dt * base[0], I[1] + dt * base[1])
        Sp = rot((S0[0] + Ip[0], S0[1] + Ip[1]), t + dt)
        B_new = forcing(t + dt, Sp[0])
        tip = rot((np.zeros_like(B_new), B_new), -(t + dt))
        I = (I[0] + 0.5 * dt * (base[0] + tip[0]),
             I[1] + 0.5 * dt * (base[1] + tip[1]))
        S = rot((S0[0] + I[0], S0[1] + I[1]), t + dt)
        B_t = forcing(t + dt, S[0])
        Xs.append(S[0].copy())
        Vs.append(S[1].copy())
    times = dt * np.arange(n_steps + 1)
    return TrajectoryBundle(times, np.array(Xs), np.array(Vs))


def tangent_cost(traj, rho0):
    """Phase-space action of a trajectory bundle against an initial density.

    Per particle, the integrand is sdot^2 + kappa^2 sdot^4 + sddot^2 (the
    squared speed of t -> (X, X') in the ambient product space). The
    aggregate is the rho0-weighted sum; the report carries the exact
    squared transport distance between the initial density and the
    endpoint push-forward, and the curvature term int kappa^2 sdot^4.
    """
    times = traj.times
    if len(times) < 5:
        raise ValueError("need at least 5 samples for second differences")
    npart = traj.X.shape[1]
    per = np.empty(npart)
    curv = np.empty(npart)
    for p in range(npart):
        fr = sg.frenet_from_samples(times, traj.X[:, p])
        integrand = fr["sdot"] ** 2 + fr["kappa"] ** 2 * fr["sdot"] ** 4 \
            + fr["sddot"] ** 2
        per[p] = np.trapezoid(integrand, times)
        curv[p] = np.trapezoid(fr["kappa"] ** 2 * fr["sdot"] ** 4, times)
    masses = rho0.values * rho0.mesh.weights
    aggregate = float(np.dot(per, masses))
    curvature_term = float(np.dot(curv, masses))
    end_masses = rho0.mesh.deposit(traj.X[-1], masses)
    from .mesh import Density
    w2, _ = ot.w2_squared_exact(
        rho0, Density(rho0.mesh, end_masses / rho0.mesh.weights,
                      normalize=True))
    return TangentCostReport(per, aggregate, w2, curvature_term)


def _contour_loops(mesh, seeds=None):
    """One-ring loops around seed nodes, ordered by angle in the tangent plane."""
    if seeds is None:
        seeds = [0, mesh.n // 2, mesh.n - 1]
    loops = []
    for i in seeds:
        nb = mesh.stencils[i]
        b1, b2 = mesh.tangent_bases[i]
        rel = mesh.nodes[nb] - mesh.nodes[i]
        ang = np.arctan2(rel @ b2, rel @ b1)
        loops.append(nb[np.argsort(ang)])
    return loops


def vorticity_diagnostic(mesh, V_series, seeds=None):
    """Per-time extrema of the normal curl and loop circulations.

    V_series is a sequence of tangential fields on the mesh nodes.
    Circulation around each stored one-ring contour is the midpoint-rule
    line integral sum 0.5 (V_a + V_b) . (x_b - x_a).
    """
    loops = _contour_loops(mesh, seeds)
    sup_curl = []
    circulations = []
    for V in V_series:
        V = np.asarray(V, float)
        sup_curl.append(float(np.max(np.abs(mesh.curl_normal(V)))))
        row = []
        for loop in loops:
            a = loop
            b = np.roll(loop, -1)
            seg = mesh.nodes[b] - mesh.nodes[a]
            row.append(float(np.sum(0.5 * np.sum((V[a] + V[b]) * seg, axis=1))))
        circulations.append(row)
    return {"sup_curl": np.array(sup_curl),
            "circulations": np.array(circulations)}


def path_regularity(densities, times, q_fields=None, theta=None):
    """2-absolute-continuity report for a density path.

    Computes sum_j W2^2(rho_{j+1}, rho_j) / dt_j; when the velocity
    potentials q_fields and an internal-energy law are supplied, also the
    budget 2 tau int int (|grad q|^2 + |grad(Theta1 o rho)|^2) rho dm dt
    and whether the sum stays below it.
    """
    times = np.asarray(times, float)
    if len(densities) < 3:
        raise ValueError("need at least 3 snapshots")
    total = 0.0
    for j in range(len(densities) - 1):
        w2, _ = ot.w2_squared_exact(densities[j], densities[j + 1])
        total += w2 / (times[j + 1] - times[j])
    report = {"sum": total, "bound": None, "ok": None}
    if q_fields is not None and theta is not None:
        mesh = densities[0].mesh
        rates = []
        for rho, q in zip(densities, q_fields):
            Gq = mesh.gradient(np.asarray(q, float))
            Gt = mesh.gradient(theta.theta1(np.maximum(rho.values, 1e-300)))
            dens = (np.einsum("ij,ij->i", Gq, Gq)
                    + np.einsum("ij,ij->i", Gt, Gt)) * rho.values
            rates.append(mesh.integrate(dens))
        bound = 2.0 * np.trapezoid(np.array(rates), times)
        report["bound"] = float(bound)
        report["ok"] = bool(total <= bound + 1e-8)
    return report
