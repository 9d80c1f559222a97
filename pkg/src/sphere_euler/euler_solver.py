"""Three-stage time stepper for isentropic flow on the sphere.

Each step starts from a pair (rho, q): a density and a velocity potential.
Stage 1 pushes rho forward along exp_x(h grad q). Stage 2 mollifies the
prediction and applies the variational corrector (jko_step). Stage 3
rebuilds the velocity by composing the stage potentials with the inverse
transport map and projecting onto rho-weighted gradients, which yields the
next potential q. An energy ledger tracks kinetic and internal energy,
per-step transport cost, the dissipation-rate functional, and a tolerance
budget assembled from the solver residuals.
"""

import numpy as np

from . import sphere_geom as sg
from . import ot
from .mesh import Density, mollify
from .energy import internal_energy, special_fisher
from .helmholtz import weighted_decompose
from .jko import jko_step, JkoConvergenceError


class NumericalAbort(RuntimeError):
    """A run stopped early; carries the partial snapshots and ledger."""

    def __init__(self, message, snapshots=None, ledger=None):
        super().__init__(message)
        self.snapshots = snapshots or []
        self.ledger = ledger


class EnergyLedger:
    """Per-step energy accounting rows."""

    COLUMNS = ("step", "t", "kinetic", "internal", "hamiltonian",
               "w2_step", "fisher", "dissipation_margin", "budget")

    def __init__(self):
        self.rows = []

    def append(self, **kw):
        self.rows.append({c: kw.get(c, 0.0) for c in self.COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows])


class SolverState:
    """A pair (rho, q) plus the rotational remainder of the last projection."""

    def __init__(self, rho, q, w=None, t=0.0):
        self.rho = rho
        self.q = np.asarray(q, float)
        mesh = rho.mesh
        self.w = np.zeros((mesh.n, 3)) if w is None else np.asarray(w, float)
        self.t = t

    @property
    def v(self):
        return self.rho.mesh.gradient(self.q) + self.w


def kinetic_energy(mesh, q, rho):
    """(1/2) int |grad q|^2 rho dm."""
    G = mesh.gradient(np.asarray(q, float))
    return 0.5 * mesh.integrate(np.einsum("ij,ij->i", G, G) * rho.values)


def hamiltonian(mesh, q, rho, theta):
    return kinetic_energy(mesh, q, rho) + internal_energy(rho, theta)


def stage1_predict(state, h):
    """Push the density forward along x -> exp_x(h grad q)."""
    mesh = state.rho.mesh
    W = h * mesh.gradient(state.q)
    if np.max(np.linalg.norm(W, axis=1)) >= np.pi:
        raise ValueError("stage 1 displacement h grad q reaches the cut locus")
    if h == 0 or np.max(np.linalg.norm(W, axis=1)) == 0.0:
        return Density(mesh, state.rho.values.copy())
    return ot.push_forward_displacement(W, state.rho)


def stage2_correct(f_h, h, theta, eps=None, jko_opts=None):
    """Mollify the prediction and take the variational step."""
    if eps is not None and eps > 0:
        f_h = mollify(f_h, eps)
    return jko_step(f_h, h, theta, jko_opts)


def stage3_project(rho_h, f, phi0, phih, h):
    """Assemble the post-step velocity and project it onto gradients.

    The velocity at y is v(y) = -(grad phi0)(T*(y)) + h (grad phih)(T*(y))
    with T*(y) = exp_y(-h^2 grad phih(y)), parallel-transported back to y;
    (q_h, w) is the rho_h-weighted Helmholtz split of v.
    """
    mesh = rho_h.mesh
    if np.min(rho_h.values) <= 0:
        raise ValueError("stage 3 requires a strictly positive density")
    phi0 = np.asarray(phi0, float)
    phih = np.asarray(phih, float)
    G0 = mesh.gradient(phi0)
    Gh = mesh.gradient(phih)
    W = -h * h * Gh
    norms = np.linalg.norm(W, axis=1)
    if np.max(norms) == 0.0:
        v = -G0 + h * Gh
    else:
        targets = sg.exp_map(mesh.nodes, W)
        idx, lam = mesh.interp_weights(targets)
        G0t = np.einsum("ij,ijk->ik", lam, G0[idx])
        Ght = np.einsum("ij,ijk->ik", lam, Gh[idx])
        vt = -G0t + h * Ght
        vt -= np.sum(vt * targets, axis=1, keepdims=True) * targets
        moved = norms > 1e-14
        v = vt.copy()
        if np.any(moved):
            v[moved] = sg.parallel_transport(targets[moved], mesh.nodes[moved],
                                             vt[moved])
    v = mesh.project_tangent(v)
    q_h, w = weighted_decompose(mesh, v, rho_h)
    return q_h, w


def energy_cross_term_margin(f, rho0, rho_h, phi0, phih, h, theta):
    """Margin of the internal-energy comparison across one step:
    U(rho0) + int f grad(Theta1 o rho_h) . grad(-h phi0 + h^2 phih) dm
    - U(rho_h); expected nonnegative up to tolerance."""
    mesh = f.mesh
    Gt = mesh.gradient(theta.theta1(np.maximum(rho_h.values, 1e-300)))
    Gp = mesh.gradient(-h * np.asarray(phi0, float)
                       + h * h * np.asarray(phih, float))
    cross = mesh.integrate(np.einsum("ij,ij->i", Gt, Gp) * f.values)
    return (internal_energy(rho0, theta) + cross
            - internal_energy(rho_h, theta))


def make_initial(mesh, initial):
    """Build (rho0, q0) from a preset description dictionary."""
    preset = initial.get("preset", "static")
    z = mesh.nodes[:, 2]
    if preset == "static":
        return Density.uniform(mesh), np.zeros(mesh.n)
    if preset == "zonal":
        a = float(initial.get("a", 0.2))
        b = float(initial.get("b", 0.1))
        if not -1 < a < 1:
            raise ValueError("zonal amplitude a must lie in (-1, 1)")
        return Density(mesh, 1.0 + a * z, normalize=True), b * z
    if preset == "rossby":
        a = float(initial.get("a", 0.1))
        m = int(initial.get("m", 3))
        if m < 1:
            raise ValueError("rossby wavenumber m must be >= 1")
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        sect = np.real((x + 1j * y) ** m)   # sin^m(theta) cos(m phi)
        rho = 1.0 + 0.5 * a * sect
        if np.min(rho) <= 0:
            raise ValueError("rossby amplitude a too large for positivity")
        return Density(mesh, rho, normalize=True), a * sect
    if preset == "from_file":
        path = initial.get("path")
        if not path:
            raise ValueError("from_file preset requires a path")
        data = np.loadtxt(path)
        if data.ndim != 2 or data.shape != (mesh.n, 2):
            raise ValueError("initial file must have %d rows of (rho, q)"
                             % mesh.n)
        return Density(mesh, data[:, 0], normalize=True), data[:, 1].copy()
    raise ValueError("unknown preset %r" % preset)


def run(mesh, theta, config):
    """Iterate the three stages for floor(tau/h) steps.

    config keys: h, tau, eps_factor (mollifier width in units of mean node
    spacing, 0 disables), initial (preset dict), jko (solver options).
    Returns (states, ledger); raises NumericalAbort with partial output if
    the bijectivity guard h * sup|D^2(Theta1 o rho)| > 0.5 trips or a
    stage fails.
    """
    h = float(config["h"])
    tau = float(config["tau"])
    if h <= 0:
        raise ValueError("h must be positive")
    if tau < h:
        raise ValueError("tau must be at least h")
    eps_factor = float(config.get("eps_factor", 2.0))
    eps = eps_factor * mesh.spacing if eps_factor > 0 else None
    jko_opts = config.get("jko")
    rho0, q0 = make_initial(mesh, config.get("initial", {"preset": "static"}))
    state = SolverState(rho0, q0, t=0.0)
    states = [state]
    ledger = EnergyLedger()
    H_prev = hamiltonian(mesh, q0, rho0, theta)
    ledger.append(step=0, t=0.0,
                  kinetic=kinetic_energy(mesh, q0, rho0),
                  internal=internal_energy(rho0, theta),
                  hamiltonian=H_prev,
                  fisher=special_fisher(rho0, theta))
    n_steps = int(np.floor(tau / h + 1e-12))
    for k in range(1, n_steps + 1):
        theta1_field = theta.theta1(np.maximum(state.rho.values, 1e-300))
        curvature = mesh.hessian_sup_norm(theta1_field)
        if h * curvature > 0.5:
            raise NumericalAbort(
                "bijectivity guard tripped at step %d: h * sup|D^2(Theta1 o "
                "rho)| = %.3f > 0.5" % (k, h * curvature), states, ledger)
        try:
            f_h = stage1_predict(state, h)
            prior = mollify(f_h, eps) if eps else f_h
            result = stage2_correct(prior, h, theta, eps=None,
                                    jko_opts=jko_opts)
            rho_h = result.rho_h
            phi0 = -state.q
            phih = -theta.theta1(np.maximum(rho_h.values, 1e-300))
            q_h, w = stage3_project(rho_h, f_h, phi0, phih, h)
        except (JkoConvergenceError, ValueError, RuntimeError) as exc:
            raise NumericalAbort("step %d failed: %s" % (k, exc),
                                 states, ledger) from exc
        w2_step, _ = ot.w2_squared_exact(state.rho, rho_h)
        kin = kinetic_energy(mesh, q_h, rho_h)
        internal = internal_energy(rho_h, theta)
        H = kin + internal
        fisher = special_fisher(rho_h, theta)
        budget = (result.optimality_residual
                  + mesh.spacing ** 2 * (1.0 + abs(H_prev)))
        ledger.append(step=k, t=k * h, kinetic=kin, internal=internal,
                      hamiltonian=H, w2_step=w2_step, fisher=fisher,
                      dissipation_margin=(H_prev - H) - 0.5 * h * h * fisher,
                      budget=budget)
        new = SolverState(rho_h, q_h, w=w, t=k * h)
        # step provenance kept for the per-step inequality diagnostics
        new.f_prior = prior
        new.phi0 = phi0
        new.phih = phih
        new.jko_residual = result.optimality_residual
        states.append(new)
        state = new
        H_prev = H
    return states, ledger


def weak_continuity_residual(mesh, densities, velocities, times, psi):
    """Residual of the weak continuity identity
    int psi(tau) rho_tau - int psi(0) rho_0
        = int int (dpsi/dt + v . grad psi) rho dm dt.

    psi is a callable psi(nodes, t) -> values; the time derivative is taken
    by centered differences on the snapshot grid and the double integral by
    the trapezoid rule.
    """
    times = np.asarray(times, float)
    nt = len(times)
    if nt < 2:
        raise ValueError("need at least two snapshots")
    P = np.array([psi(mesh.nodes, t) for t in times])  # (nt, n)
    dP = np.gradient(P, times, axis=0)
    rates = np.empty(nt)
    for j in range(nt):
        Gp = mesh.gradient(P[j])
        adv = np.einsum("ij,ij->i", np.asarray(velocities[j], float), Gp)
        rates[j] = mesh.integrate((dP[j] + adv) * densities[j].values)
    rhs = np.trapezoid(rates, times)
    lhs = (mesh.integrate(P[-1] * densities[-1].values)
           - mesh.integrate(P[0] * densities[0].values))
    return abs(lhs - rhs)


def weak_acceleration_residual(mesh, densities, velocities, times, phi,
                               theta):
    """Diagnostic residual of the weak acceleration identity
    int int phi . (dv/dt + y + grad(Theta1 o rho)) rho dm dt,
    with a tangential vector test function phi(nodes, t); phi . y vanishes
    for tangential tests, so the middle term only guards projection error.
    The time derivative of v is Eulerian (centered differences at fixed
    nodes); this residual is monitored, not asserted to converge.
    """
    times = np.asarray(times, float)
    V = np.array([np.asarray(v, float) for v in velocities])  # (nt, n, 3)
    dV = np.gradient(V, times, axis=0)
    rates = np.empty(len(times))
    for j, t in enumerate(times):
        ph = mesh.project_tangent(np.asarray(phi(mesh.nodes, t), float))
        force = (dV[j] + mesh.nodes
                 + mesh.gradient(theta.theta1(
                     np.maximum(densities[j].values, 1e-300))))
        rates[j] = mesh.integrate(
            np.einsum("ij,ij->i", ph, force) * densities[j].values)
    return abs(np.trapezoid(rates, times))


def onofri_check(mesh, q):
    """Margin of the exponential-moment inequality on the sphere:
    mean(q) + (1/16 pi) int |grad q|^2 dm - log mean(e^q) >= 0,
    with means against normalized surface measure. Overflow-guarded."""
    q = np.asarray(q, float)
    mean_q = mesh.integrate(q) / (4 * np.pi)
    G = mesh.gradient(q)
    dirichlet = mesh.integrate(np.einsum("ij,ij->i", G, G))
    qmax = float(np.max(q))
    log_mean_exp = qmax + np.log(
        mesh.integrate(np.exp(q - qmax)) / (4 * np.pi))
    return mean_q + dirichlet / (16 * np.pi) - log_mean_exp


def gronwall_compare(mesh, theta, times_a, densities_a, times_b, densities_b,
                     time_tol=1e-9):
    """Stability comparison of two density paths sharing mesh and initial
    data: measured W1 distances at common snapshot times against the
    exponential envelope
        bound(t) = eta(t) + int_0^t K e^{K (t-s)} eta(s) ds,
    where eta(t) = int_0^t int |grad(Theta1 o rho_A) - grad(Theta1 o
    rho_B)| rho_A dm du and K is the recorded sup of |D^2(Theta1 o rho)|
    over both runs.
    """
    times_a = np.asarray(times_a, float)
    times_b = np.asarray(times_b, float)
    ia, ib = [], []
    for i, t in enumerate(times_a):
        j = np.argmin(np.abs(times_b - t))
        if abs(times_b[j] - t) < time_tol:
            ia.append(i)
            ib.append(j)
    if len(ia) < 2:
        raise ValueError("runs share fewer than two snapshot times")
    common = times_a[ia]
    if np.max(np.abs(densities_a[ia[0]].values
                     - densities_b[ib[0]].values)) > 1e-12:
        raise ValueError("runs do not share initial data")
    K = 0.0
    disc = np.empty(len(ia))
    w1 = np.empty(len(ia))
    for k, (i, j) in enumerate(zip(ia, ib)):
        ra, rb = densities_a[i], densities_b[j]
        ta = theta.theta1(np.maximum(ra.values, 1e-300))
        tb = theta.theta1(np.maximum(rb.values, 1e-300))
        K = max(K, mesh.hessian_sup_norm(ta), mesh.hessian_sup_norm(tb))
        diff = mesh.gradient(ta) - mesh.gradient(tb)
        disc[k] = mesh.integrate(
            np.linalg.norm(diff, axis=1) * ra.values)
        w1[k] = 0.0 if k == 0 else ot.w1_exact(ra, rb)
    eta = np.concatenate([[0.0], np.cumsum(
        0.5 * (disc[1:] + disc[:-1]) * np.diff(common))])
    bound = np.empty_like(eta)
    for k in range(len(eta)):
        s = common[:k + 1]
        integrand = K * np.exp(K * (common[k] - s)) * eta[:k + 1]
        bound[k] = eta[k] + np.trapezoid(integrand, s)
    return {"times": common, "w1": w1, "eta": eta, "bound": bound, "K": K}
