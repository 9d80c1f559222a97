import numpy as np
import pytest

from sphere_euler.mesh import build_icosphere, Mesh, Density, mollify


MESH = build_icosphere(3)


def test_node_counts():
    for level, n in ((1, 42), (2, 162), (3, 642)):
        assert build_icosphere(level).n == n


def test_weights_sum_to_sphere_area():
    assert abs(np.sum(MESH.weights) - 4 * np.pi) < 1e-9


def test_integrate_constants_and_harmonics():
    assert abs(MESH.integrate(np.ones(MESH.n)) - 4 * np.pi) < 1e-9
    # degree-1 and degree-2 harmonics integrate to zero
    x, y, z = MESH.nodes.T
    for f in (x, y, z, x * y, 3 * z * z - 1):
        assert abs(MESH.integrate(f)) < 2e-3


def test_gradient_of_linear_field():
    # grad(x . a) = a - (x . a) x on the sphere
    a = np.array([0.3, -0.7, 0.5])
    f = MESH.nodes @ a
    G = MESH.gradient(f)
    exact = a[None, :] - f[:, None] * MESH.nodes
    assert np.max(np.linalg.norm(G - exact, axis=1)) < 5e-3


def test_gradient_is_tangential():
    f = np.sin(MESH.nodes[:, 2] * 2)
    G = MESH.gradient(f)
    assert np.max(np.abs(np.einsum("ij,ij->i", G, MESH.nodes))) < 1e-12


def test_divergence_of_gradient_matches_laplacian():
    z = MESH.nodes[:, 2]
    f = z
    # Laplace-Beltrami of the degree-1 harmonic: -2 z
    lap = MESH.laplacian(f)
    interior_err = np.abs(lap + 2 * z)
    assert np.median(interior_err) < 0.05
    div = MESH.divergence(MESH.gradient(f))
    assert np.median(np.abs(div + 2 * z)) < 0.1


def test_curl_of_gradient_vanishes():
    f = MESH.nodes[:, 0] * MESH.nodes[:, 2]
    curl = MESH.curl_normal(MESH.gradient(f))
    assert np.max(np.abs(curl)) < 0.05


def test_divergence_of_rotational_field_vanishes():
    # V = X x grad(z) has zero divergence
    V = np.cross(MESH.nodes, MESH.gradient(MESH.nodes[:, 2]))
    assert np.max(np.abs(MESH.divergence(V))) < 0.05


def test_hessian_sup_norm_of_linear_field():
    # Hess(z) = -z g on the sphere, sup norm 1
    z = MESH.nodes[:, 2]
    sup = MESH.hessian_sup_norm(z)
    assert abs(sup - 1.0) < 0.15


def test_interpolation_reproduces_linear_fields():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((50, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    f = MESH.nodes @ np.array([0.2, 0.5, -0.3])
    vals = MESH.interpolate(f, pts)
    exact = pts @ np.array([0.2, 0.5, -0.3])
    assert np.max(np.abs(vals - exact)) < 5e-3


def test_deposit_conserves_mass():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((200, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    masses = rng.uniform(0.1, 1.0, 200)
    dep = MESH.deposit(pts, masses)
    assert abs(dep.sum() - masses.sum()) < 1e-10


def test_density_mass_invariant():
    with pytest.raises(ValueError):
        Density(MESH, np.full(MESH.n, 2.0 / (4 * np.pi)))
    d = Density(MESH, np.full(MESH.n, 2.0 / (4 * np.pi)), normalize=True)
    assert abs(d.mass() - 1.0) < 1e-12


def test_density_uniform():
    d = Density.uniform(MESH)
    assert abs(d.mass() - 1.0) < 1e-12
    assert np.allclose(d.values, 1.0 / (4 * np.pi))


def test_mollify_preserves_mass_and_smooths():
    z = MESH.nodes[:, 2]
    d = Density(MESH, 1.0 + 0.5 * z, normalize=True)
    m = mollify(d, 2 * MESH.spacing)
    assert abs(m.mass() - 1.0) < 1e-12
    assert np.max(m.values) < np.max(d.values)
    assert np.min(m.values) > np.min(d.values)


def test_export_import_round_trip():
    text = MESH.export_text()
    back = Mesh.import_text(text)
    assert back.n == MESH.n
    assert np.max(np.abs(back.nodes - MESH.nodes)) == 0.0
    assert np.max(np.abs(back.weights - MESH.weights)) == 0.0
    assert back.checksum == MESH.checksum


def test_checksum_distinguishes_levels():
    assert build_icosphere(2).checksum != MESH.checksum


def test_spacing_shrinks_with_refinement():
    assert build_icosphere(2).spacing > MESH.spacing > 0
