import numpy as np
import pytest

from sphere_euler.mesh import build_icosphere, Density
from sphere_euler import tangent_flow as tf
from sphere_euler import ot


E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def free_forcing(X):
    return -X


def latitude_forcing(theta0):
    # keeps a unit-speed particle on the latitude circle at polar angle
    # theta0; tangential part has magnitude cot(theta0)
    s2 = np.sin(theta0) ** 2

    def g(X):
        X = np.atleast_2d(X)
        return (1.0 - 1.0 / s2) * X + (np.cos(theta0) / s2) * E3

    return g


def latitude_exact(theta0, t):
    phi = t / np.sin(theta0)
    X = np.array([np.sin(theta0) * np.cos(phi),
                  np.sin(theta0) * np.sin(phi),
                  np.cos(theta0)])
    V = np.array([-np.sin(phi), np.cos(phi), 0.0])
    return X, V


def test_great_circle_exact_any_step():
    for h in (0.01, 0.3, 1.2):
        state = tf.PhasePoint(E1, E2)
        out = tf.step_predictor(state, h, free_forcing)
        exact = E1 * np.cos(h) + E2 * np.sin(h)
        assert np.linalg.norm(out.X - exact) < 1e-10
        assert abs(np.linalg.norm(out.V) - 1.0) < 1e-10


def test_zero_velocity_pure_normal_forcing_is_stationary():
    state = tf.PhasePoint(E1, np.zeros(3))
    out = tf.step_predictor(state, 0.1, free_forcing)
    assert np.linalg.norm(out.X - E1) < 1e-12
    assert np.linalg.norm(out.V) < 1e-12


def test_speed_conserved_free_motion():
    state = tf.PhasePoint(E1, 0.7 * E2)
    traj = tf.integrate_predictor(state, 0.05, 40, free_forcing)
    speeds = np.linalg.norm(traj.V[:, 0], axis=1)
    assert np.max(np.abs(speeds - 0.7)) < 1e-10


def test_tangency_preserved():
    theta0 = 1.1
    X0, V0 = latitude_exact(theta0, 0.0)
    traj = tf.integrate_predictor(tf.PhasePoint(X0, V0), 0.01, 100,
                                  latitude_forcing(theta0))
    dots = np.abs(np.einsum("tpj,tpj->tp", traj.X, traj.V))
    norms = np.abs(np.linalg.norm(traj.X, axis=2) - 1.0)
    assert np.max(dots) < 1e-10
    assert np.max(norms) < 1e-12


def test_predictor_second_order_on_latitude_circle():
    theta0 = 1.1
    T = 1.0
    X0, V0 = latitude_exact(theta0, 0.0)
    Xe, _ = latitude_exact(theta0, T)
    errs = []
    for n in (50, 100, 200):
        traj = tf.integrate_predictor(tf.PhasePoint(X0, V0), T / n, n,
                                      latitude_forcing(theta0))
        errs.append(np.linalg.norm(traj.X[-1, 0] - Xe))
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert abs(r1 - 4.0) < 0.3
    assert abs(r2 - 4.0) < 0.3


def test_integral_equation_zero_forcing_exact():
    state = tf.PhasePoint(E1, E2)
    traj = tf.integrate_integral_equation(
        state, lambda t, X: np.zeros_like(X), 1.0, 0.02)
    t = traj.times
    exact = np.outer(np.cos(t), E1) + np.outer(np.sin(t), E2)
    assert np.max(np.linalg.norm(traj.X[:, 0] - exact, axis=1)) < 1e-12


def test_integral_equation_matches_predictor_on_latitude():
    theta0 = 1.1
    T = 0.5
    X0, V0 = latitude_exact(theta0, 0.0)
    g = latitude_forcing(theta0)

    def pressure_grad(t, X):
        return g(X) + X  # strip the normal constraint part handled exactly

    errs = []
    for n in (100, 200):
        a = tf.integrate_predictor(tf.PhasePoint(X0, V0), T / n, n, g)
        b = tf.integrate_integral_equation(tf.PhasePoint(X0, V0),
                                           pressure_grad, T, T / n)
        errs.append(np.linalg.norm(a.X[-1, 0] - b.X[-1, 0]))
    assert errs[1] < errs[0] / 2.5  # cross-agreement at second order


def test_integral_equation_time_reversal():
    theta0 = 1.1
    T = 0.4
    X0, V0 = latitude_exact(theta0, 0.0)
    g = latitude_forcing(theta0)

    def pressure_grad(t, X):
        return g(X) + X

    dt = 0.004
    fwd = tf.integrate_integral_equation(tf.PhasePoint(X0, V0),
                                         pressure_grad, T, dt)
    back = tf.integrate_integral_equation(
        tf.PhasePoint(fwd.X[-1, 0], -fwd.V[-1, 0]), pressure_grad, T, dt)
    assert np.linalg.norm(back.X[-1, 0] - X0) < 50 * dt ** 2


def test_integral_equation_requires_commensurate_steps():
    with pytest.raises(ValueError):
        tf.integrate_integral_equation(tf.PhasePoint(E1, E2),
                                       lambda t, X: np.zeros_like(X),
                                       0.5, 0.15)


def test_tangent_cost_great_circle_value():
    # unit-speed great circle: sdot = 1, kappa = 1, sddot = 0, so the
    # integrand is 2 and the per-particle cost over [0, T] equals 2T
    mesh = build_icosphere(1)
    T = 0.5
    n = 100
    t = np.linspace(0, T, n + 1)
    X = np.stack([np.outer(np.cos(t), E1) + np.outer(np.sin(t), E2)],
                 axis=1)[:, 0][:, None, :]
    V = np.stack([-np.outer(np.sin(t), E1) + np.outer(np.cos(t), E2)],
                 axis=1)[:, 0][:, None, :]
    X = np.repeat(X, mesh.n, axis=1)
    V = np.repeat(V, mesh.n, axis=1)
    traj = tf.TrajectoryBundle(t, X, V)
    report = tf.tangent_cost(traj, Density.uniform(mesh))
    assert np.max(np.abs(report.per_particle - 2 * T)) < 0.03 * 2 * T


def test_tangent_cost_reversal_symmetry():
    theta0 = 1.1
    X0, V0 = latitude_exact(theta0, 0.0)
    mesh = build_icosphere(1)
    traj = tf.integrate_predictor(
        tf.PhasePoint(np.repeat(X0[None, :], mesh.n, axis=0),
                      np.repeat(V0[None, :], mesh.n, axis=0)),
        0.01, 50, latitude_forcing(theta0))
    rev = tf.TrajectoryBundle(traj.times, traj.X[::-1], -traj.V[::-1])
    rho0 = Density.uniform(mesh)
    a = tf.tangent_cost(traj, rho0)
    b = tf.tangent_cost(rev, rho0)
    assert abs(a.aggregate - b.aggregate) < 1e-9 * max(a.aggregate, 1.0)


def _rotation_matrix(axis, ang):
    a = axis / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)


def test_tangent_cost_lower_bound_rigid_rotation():
    # rotate a zonal density rigidly about a generic axis (one missing the
    # mesh nodes, so no particle is stationary); the phase-space action
    # dominates the endpoint transport cost plus the curvature term
    axis = np.array([1.0, 0.37, 0.21])
    axis /= np.linalg.norm(axis)
    mesh = build_icosphere(2)
    rho0 = Density(mesh, 1.0 + 0.4 * mesh.nodes[:, 2], normalize=True)
    T = 0.4
    n = 80
    t = np.linspace(0, T, n + 1)
    X = np.empty((n + 1, mesh.n, 3))
    V = np.empty((n + 1, mesh.n, 3))
    for k in range(n + 1):
        X[k] = mesh.nodes @ _rotation_matrix(axis, t[k]).T
        V[k] = np.cross(axis, X[k])
    traj = tf.TrajectoryBundle(t, X, V)
    report = tf.tangent_cost(traj, rho0)
    lower = report.w2_term + report.curvature_term
    assert report.aggregate >= lower - 0.01 * report.aggregate


def test_tangent_cost_needs_enough_samples():
    mesh = build_icosphere(1)
    t = np.linspace(0, 0.1, 3)
    X = np.repeat(mesh.nodes[None, :, :], 3, axis=0)
    V = np.zeros_like(X)
    with pytest.raises(ValueError):
        tf.tangent_cost(tf.TrajectoryBundle(t, X, V),
                        Density.uniform(mesh))


def test_vorticity_gradient_field_small_curl():
    mesh = build_icosphere(3)
    V = mesh.gradient(0.1 * mesh.nodes[:, 2])
    out = tf.vorticity_diagnostic(mesh, [V])
    assert out["sup_curl"][0] < 5e-3


def test_vorticity_frozen_rotational_field_constant_circulation():
    mesh = build_icosphere(3)
    V = np.cross(mesh.nodes, mesh.gradient(0.3 * mesh.nodes[:, 2]))
    out = tf.vorticity_diagnostic(mesh, [V, V, V])
    drift = np.max(np.abs(out["circulations"] - out["circulations"][0]))
    assert drift == 0.0
    assert out["sup_curl"][0] > 0.01  # genuinely rotational


def test_path_regularity_constant_path():
    mesh = build_icosphere(2)
    rho = Density(mesh, 1.0 + 0.2 * mesh.nodes[:, 2], normalize=True)
    report = tf.path_regularity([rho, rho, rho], [0.0, 0.1, 0.2])
    assert report["sum"] < 1e-10


def test_path_regularity_rigid_rotation_upper_bound():
    # a rotational velocity field is not a gradient, so Cauchy-Schwarz is
    # strict: the step sum stays below (tau / 2) * int |V|^2 rho dm
    axis = np.array([1.0, 0.37, 0.21])
    axis /= np.linalg.norm(axis)
    mesh = build_icosphere(3)
    tau = 0.4
    times = np.linspace(0, tau, 5)
    densities = []
    for t in times:
        back = mesh.nodes @ _rotation_matrix(axis, t)
        densities.append(Density(mesh, 1.0 + 0.4 * back[:, 2],
                                 normalize=True))
    report = tf.path_regularity(densities, times)
    Vn = np.cross(axis, mesh.nodes)
    Vsq = np.einsum("ij,ij->i", Vn, Vn)
    bound = 0.5 * tau * mesh.integrate(Vsq * densities[0].values)
    assert report["sum"] < bound


def test_path_regularity_geodesic_path_equality():
    # pushing along t * grad(phi) is a transport geodesic; the step sum
    # approaches (tau / 2) * int |grad phi|^2 rho dm. Steps must be large
    # next to the mesh spacing or the discrete-transport noise floor
    # dominates the small per-step distances.
    mesh = build_icosphere(3)
    z = mesh.nodes[:, 2]
    rho0 = Density(mesh, 1.0 + 0.3 * mesh.nodes[:, 0], normalize=True)
    G = mesh.gradient(0.6 * z)
    I = mesh.integrate(np.einsum("ij,ij->i", G, G) * rho0.values)
    times = [0.0, 0.5, 1.0]
    densities = [ot.push_forward_displacement(t * G, rho0) for t in times]
    report = tf.path_regularity(densities, times)
    oracle = 0.5 * 1.0 * I
    assert abs(report["sum"] - oracle) < 0.1 * oracle


def test_path_regularity_needs_three_snapshots():
    mesh = build_icosphere(1)
    rho = Density.uniform(mesh)
    with pytest.raises(ValueError):
        tf.path_regularity([rho, rho], [0.0, 0.1])
