import numpy as np
import pytest

from sphere_euler.mesh import build_icosphere, Density
from sphere_euler.energy import theta_power, internal_energy
from sphere_euler import jko
from sphere_euler import ot


MESH2 = build_icosphere(2)
THETA = theta_power(2.0, 1.0)


class ToyMesh:
    """Three orthogonal nodes with equal cell areas summing to 4 pi."""

    def __init__(self):
        self.nodes = np.eye(3)
        self.n = 3
        self.weights = np.full(3, 4 * np.pi / 3)

    def integrate(self, values):
        return float(np.dot(self.weights, np.asarray(values, float)))


def zonal(mesh, a=0.2):
    return Density(mesh, 1.0 + a * mesh.nodes[:, 2], normalize=True)


def test_h_zero_is_identity():
    f = zonal(MESH2)
    result = jko.jko_step(f, 0.0, THETA)
    assert np.max(np.abs(result.rho_h.values - f.values)) == 0.0
    assert result.value == 0.0
    assert result.optimality_residual == 0.0


def test_uniform_prior_is_fixed_point():
    f = Density.uniform(MESH2)
    result = jko.jko_step(f, 0.1, THETA)
    assert np.max(np.abs(result.rho_h.values - f.values)) < 1e-6
    assert result.optimality_residual < 1e-7


def test_rejects_vacuum_prior():
    vals = np.full(MESH2.n, 1.0 / (4 * np.pi))
    f = Density(MESH2, vals)
    f.values[0] = 0.0
    with pytest.raises(ValueError):
        jko.jko_step(f, 0.1, THETA)


def test_three_node_oracle():
    # brute-force simplex scan oracle for gamma = 2, h = 0.5,
    # prior masses (0.5, 0.3, 0.2)
    toy = ToyMesh()
    masses = np.array([0.5, 0.3, 0.2])
    f = Density(toy, masses / toy.weights)
    result = jko.jko_step(f, 0.5, theta_power(2.0, 1.0))
    oracle = 0.02267957939059509
    assert abs(result.value - oracle) < 1e-6


def test_value_not_above_prior_energy():
    # rho = f is feasible, so the optimum is at most h^2 U(f)
    f = zonal(MESH2)
    h = 0.1
    result = jko.jko_step(f, h, THETA)
    assert result.value <= h * h * internal_energy(f, THETA) + 1e-12


def test_energy_function_matches_result_value():
    f = zonal(MESH2)
    h = 0.1
    result = jko.jko_step(f, h, THETA)
    direct = jko.energy(result.rho_h, f, h, THETA)
    assert abs(direct - result.value) < 1e-10


def test_dual_weak_duality():
    # the returned potentials give a dual value below the optimum
    f = zonal(MESH2)
    h = 0.1
    result = jko.jko_step(f, h, THETA)
    u, v = result.potentials
    C = ot.cost_matrix(MESH2.nodes, MESH2.nodes)
    assert np.max(u[:, None] + v[None, :] - C) < 1e-7
    a = f.values * MESH2.weights
    b = result.rho_h.values * MESH2.weights
    dual = float(np.dot(a, u) + np.dot(b, v))
    w2, _ = ot.w2_squared_exact(f, result.rho_h)
    assert dual <= w2 + 1e-9


def test_initialization_independence():
    # phase 1 is a contraction: two different regs land on the same optimum
    f = zonal(MESH2)
    h = 0.1
    r1 = jko.jko_step(f, h, THETA, {"reg": 1e-3})
    r2 = jko.jko_step(f, h, THETA, {"reg": 2e-3})
    assert abs(r1.value - r2.value) < 1e-9
    l1 = float(np.dot(np.abs(r1.rho_h.values - r2.rho_h.values),
                      MESH2.weights))
    assert l1 < 1e-4


def test_entropic_only_mode_returns_without_error():
    f = zonal(MESH2)
    result = jko.jko_step(f, 0.1, THETA, {"polish_iters": 0, "reg": 5e-4})
    assert result.optimality_residual >= 0.0


def test_fisher_gap_margin():
    f = zonal(MESH2)
    h = 0.05
    result = jko.jko_step(f, h, THETA)
    margin = jko.fisher_gap_check(f, result, h, THETA)
    assert margin >= -1e-4


def test_minimizer_bounds():
    f = zonal(MESH2)
    result = jko.jko_step(f, 0.05, THETA)
    assert jko.minimizer_bounds_check(result, float(np.min(f.values)))


def test_optimality_map_residual_small():
    f = zonal(MESH2)
    h = 0.05
    result = jko.jko_step(f, h, THETA)
    res = jko.optimality_map_residual(result, f, h, THETA)
    assert res < 5e-4
    assert jko.optimality_map_residual(result, f, 0.0, THETA) == 0.0


def test_log_law_closed_form_update():
    from sphere_euler.energy import theta_log
    f = zonal(MESH2, a=0.1)
    result = jko.jko_step(f, 0.05, theta_log())
    assert result.optimality_residual < 1e-2
    assert abs(result.rho_h.mass() - 1.0) < 1e-9


def test_jacobian_logconcavity_probe_radial_oracle():
    # phi = a * (x . e3): Hess(phi) = -(a x . e3) P in ambient form
    mesh = MESH2
    a0, ah = 0.3, 0.2
    phi0 = a0 * mesh.nodes[:, 2]
    phih = ah * mesh.nodes[:, 2]
    node = int(np.argmax(np.abs(mesh.nodes[:, 0])))  # near the equator
    x = mesh.nodes[node]
    P = np.eye(3) - np.outer(x, x)
    h = 0.3
    dd = jko.jacobian_logconcavity_probe(
        mesh, phi0, phih, node, h,
        hess0=-(a0 * x[2]) * P, hessh=-(ah * x[2]) * P)
    assert np.all(dd <= 1e-8)


def test_jacobian_probe_rejects_large_displacement():
    mesh = MESH2
    phi = 3.0 * mesh.nodes[:, 2]
    with pytest.raises(ValueError):
        jko.jacobian_logconcavity_probe(mesh, phi, phi, 0, 1.0)
