"""Internal-energy laws and derived functionals.

A ThetaModel packages the specific energy Theta(rho) together with its
derivatives, the enthalpy-like function Theta1(r) = r*Theta'(r) + Theta(r),
and its inverse chi. PhiModel packages the convex weight Phi used by the
entropy/information functionals, with Phi''(r) = r * Theta1'(r)^2 when
derived from a ThetaModel.
"""

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .mesh import Density


class ThetaModel:
    """Specific internal energy Theta with derivatives and Theta1 inverse."""

    def __init__(self, variant, theta, theta_p, theta_pp, theta1, theta1_p, chi,
                 params=None):
        self.variant = variant
        self.theta = theta
        self.theta_p = theta_p
        self.theta_pp = theta_pp
        self.theta1 = theta1
        self.theta1_p = theta1_p
        self.chi = chi
        self.params = dict(params or {})


def theta_power(gamma, coeff=1.0):
    """Power law Theta(r) = coeff * r^(gamma-1); Theta1 = coeff*gamma*r^(gamma-1)."""
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    c, g = float(coeff), float(gamma)
    return ThetaModel(
        "power",
        theta=lambda r: c * np.power(r, g - 1),
        theta_p=lambda r: c * (g - 1) * np.power(r, g - 2),
        theta_pp=lambda r: c * (g - 1) * (g - 2) * np.power(r, g - 3),
        theta1=lambda r: c * g * np.power(r, g - 1),
        theta1_p=lambda r: c * g * (g - 1) * np.power(r, g - 2),
        chi=lambda s: np.power(np.asarray(s) / (c * g), 1.0 / (g - 1)),
        params={"gamma": g, "coeff": c},
    )


def theta_power_shortcut(gamma):
    """Power law normalized so that Theta1(r) = r^(gamma-1) exactly
    (equivalently r*Theta(r) = r^gamma / gamma)."""
    return theta_power(gamma, coeff=1.0 / gamma)


def theta_log():
    """Logarithmic law Theta(r) = log r; Theta1 = 1 + log r."""
    return ThetaModel(
        "log",
        theta=np.log,
        theta_p=lambda r: 1.0 / np.asarray(r, float),
        theta_pp=lambda r: -1.0 / np.asarray(r, float) ** 2,
        theta1=lambda r: 1.0 + np.log(r),
        theta1_p=lambda r: 1.0 / np.asarray(r, float),
        chi=lambda s: np.exp(np.asarray(s, float) - 1.0),
    )


def theta_custom(theta, theta_p, theta_pp=None, r_max=1e6):
    """Custom law; Theta1 and derivatives formed from the callables, and chi
    computed by bisection on [0, r_max]."""
    def theta1(r):
        return np.asarray(r, float) * theta_p(r) + theta(r)

    def theta1_p(r):
        r = np.asarray(r, float)
        if theta_pp is not None:
            return 2.0 * theta_p(r) + r * theta_pp(r)
        h = 1e-6 * np.maximum(r, 1e-6)
        return (theta1(r + h) - theta1(r - h)) / (2 * h)

    def chi(s):
        def solve(si):
            return brentq(lambda r: theta1(r) - si, 1e-300, r_max, xtol=1e-12)
        s = np.asarray(s, float)
        return np.vectorize(solve)(s) if s.ndim else solve(float(s))

    return ThetaModel("custom", theta, theta_p,
                      theta_pp or (lambda r: theta1_p(r)), theta1, theta1_p, chi)


class PhiModel:
    """Convex weight Phi with first and second derivatives."""

    def __init__(self, Phi, Phi_p, Phi_pp, provenance="explicit"):
        self.Phi = Phi
        self.Phi_p = Phi_p
        self.Phi_pp = Phi_pp
        self.provenance = provenance


def phi_from_theta(theta):
    """Phi(r) = int_0^r (r - u) u Theta1'(u)^2 du, so Phi'' = r Theta1'(r)^2.

    Power laws evaluate in closed form: for Theta = c r^(gamma-1),
    Phi(r) = c^2 gamma^2 (gamma-1) r^(2 gamma - 1) / (2 (2 gamma - 1)).
    """
    if theta.variant == "power":
        g = theta.params["gamma"]
        c = theta.params["coeff"]
        k = c * c * g * g * (g - 1) / (2 * (2 * g - 1))
        return PhiModel(
            Phi=lambda r: k * np.power(r, 2 * g - 1),
            Phi_p=lambda r: k * (2 * g - 1) * np.power(r, 2 * g - 2),
            Phi_pp=lambda r: np.asarray(r, float) * theta.theta1_p(r) ** 2,
            provenance="from_theta",
        )
    if theta.variant == "log":
        raise ValueError("Phi integral diverges at 0 for the log law")

    def Phi(r):
        def one(ri):
            return quad(lambda u: (ri - u) * u * theta.theta1_p(u) ** 2, 0, ri,
                        limit=200)[0]
        r = np.asarray(r, float)
        return np.vectorize(one)(r) if r.ndim else one(float(r))

    def Phi_p(r):
        def one(ri):
            return quad(lambda u: u * theta.theta1_p(u) ** 2, 0, ri, limit=200)[0]
        r = np.asarray(r, float)
        return np.vectorize(one)(r) if r.ndim else one(float(r))

    return PhiModel(Phi, Phi_p, lambda r: np.asarray(r, float) * theta.theta1_p(r) ** 2,
                    provenance="from_theta")


# -- functionals -------------------------------------------------------------

def internal_energy(rho, theta):
    """U(rho) = integral of Theta(rho) * rho."""
    v = rho.values
    if theta.variant == "log" and np.any(v <= 0):
        raise ValueError("log law requires strictly positive density")
    pos = v > 0
    integrand = np.zeros_like(v)
    integrand[pos] = theta.theta(v[pos]) * v[pos]
    return rho.mesh.integrate(integrand)


def pressure(rho_value, theta):
    """p(rho) = rho^2 Theta'(rho)."""
    r = np.asarray(rho_value, float)
    out = np.where(r > 0, r ** 2 * theta.theta_p(np.maximum(r, 1e-300)), 0.0)
    return out if out.ndim else float(out)


def phi_entropy(f_values, mu, phi):
    """Jensen gap: int Phi(f) dmu - Phi(int f dmu)."""
    f = np.asarray(f_values, float)
    w = mu.values * mu.mesh.weights
    mean = float(np.dot(f, w))
    return float(np.dot(phi.Phi(f), w)) - float(phi.Phi(mean))


def phi_information(f_values, mu, phi):
    """int Phi''(f) |grad f|^2 dmu."""
    f = np.asarray(f_values, float)
    G = mu.mesh.gradient(f)
    g2 = np.einsum("ij,ij->i", G, G)
    return float(np.dot(phi.Phi_pp(f) * g2, mu.values * mu.mesh.weights))


def special_fisher(rho, theta):
    """int rho |grad(Theta1 o rho)|^2 dm, the dissipation-rate functional."""
    v = np.maximum(rho.values, 1e-300)
    G = rho.mesh.gradient(theta.theta1(v))
    g2 = np.einsum("ij,ij->i", G, G)
    return float(np.dot(rho.values * g2, rho.mesh.weights))


def entropy_production_check(f_values, mu, phi, kappa0=1.0):
    """Margin (1/(2 kappa0)) * information - entropy; >= 0 when the
    entropy-production inequality holds at curvature constant kappa0."""
    return phi_information(f_values, mu, phi) / (2.0 * kappa0) - phi_entropy(f_values, mu, phi)


def zonal_entropy_production_margin(a, phi, kappa0, npts=200):
    """Same margin for the zonal profile f = 1 + a*cos(theta) against the
    uniform probability measure, by 1-D Gauss-Legendre quadrature in
    u = cos(theta) (exact for polynomial Phi, spectrally accurate otherwise)."""
    u, w = np.polynomial.legendre.leggauss(npts)
    f = 1.0 + a * u
    ent = 0.5 * np.dot(phi.Phi(f), w) - float(phi.Phi(1.0))
    info = 0.5 * np.dot(phi.Phi_pp(f) * a * a * (1.0 - u * u), w)
    return info / (2.0 * kappa0) - ent


# -- hypothesis checkers ------------------------------------------------------

def _probe_grid():
    return np.logspace(-4, 4, 400)


def _convex_on_grid(x, y, rtol=1e-12):
    """Divided-difference convexity test on a (possibly nonuniform) grid.

    The tolerance tracks the roundoff amplification of second differences,
    pointwise, so exactly linear data passes and genuinely concave data fails.
    """
    dx = np.diff(x)
    dd = np.diff(np.diff(y) / dx) / (0.5 * (x[2:] - x[:-2]))
    local = np.abs(y[:-2]) + np.abs(y[1:-1]) + np.abs(y[2:]) + 1e-300
    tol = rtol * local / (dx[:-1] * dx[1:])
    return bool(np.all(dd >= -tol))


def check_admissible(phi, grid=None):
    """True iff -1/Phi'' is numerically convex on the probe grid."""
    x = _probe_grid() if grid is None else np.asarray(grid, float)
    pp = phi.Phi_pp(x)
    if np.any(pp <= 0):
        raise ValueError("Phi'' must be positive on the probe grid")
    return _convex_on_grid(x, -1.0 / pp)


def check_convexity_hypotheses(theta):
    """Numeric verdicts for the five structural hypotheses on Theta:

    (i)   r -> Theta(e^r) strictly increasing and convex,
    (ii)  Theta(x) -> 0 as x -> 0+ and Theta(x) -> infinity as x -> infinity,
    (iii) doubling: Theta(2x) <= K2 * Theta(x) with finite K2 > 0,
    (iv)  x * Theta1'(x) increasing,
    (v)   -1 / (x * Theta1'(x)^2) convex.

    Returns a dict with boolean verdicts, the estimated K2 and 'all_five'.
    """
    x = _probe_grid()
    t = np.log(x)  # uniform grid
    y = theta.theta(x)

    d1 = np.diff(y) / np.diff(t)
    scale = np.max(np.abs(y)) + 1e-300
    increasing = bool(np.all(d1 > 1e-12 * scale))
    d2 = np.diff(d1) / np.diff(t[:-1])
    convex_i = bool(np.all(d2 >= -1e-9 * scale))
    hyp_i = increasing and convex_i

    # the vanishing limit is probed deep into the tail so that slowly
    # decaying powers (gamma close to 1) are still recognized
    near0 = float(theta.theta(1e-200))
    # unbounded growth: still strictly increasing far out and already
    # past any fixed level (powers near gamma = 1 grow slowly)
    grows = (float(theta.theta(1e9)) > float(theta.theta(1e6)) + 1e-6
             and float(theta.theta(1e9)) > 1.0)
    hyp_ii = bool(abs(near0) < 1e-3 and grows)

    y2 = theta.theta(2 * x)
    if np.any(y <= 0):
        hyp_iii, K2 = False, float("inf")
    else:
        ratios = y2 / y
        K2 = float(np.max(ratios))
        hyp_iii = bool(np.isfinite(K2) and K2 > 0 and np.all(ratios > 0))

    g = x * theta.theta1_p(x)
    hyp_iv = bool(np.all(np.diff(g) > -1e-12 * (np.max(np.abs(g)) + 1e-300)))

    denom = x * theta.theta1_p(x) ** 2
    if np.any(denom <= 0):
        hyp_v = False
    else:
        hyp_v = _convex_on_grid(x, -1.0 / denom)

    out = {"i": hyp_i, "ii": hyp_ii, "iii": hyp_iii, "iv": hyp_iv, "v": hyp_v,
           "K2": K2}
    out["all_five"] = all(out[k] for k in ("i", "ii", "iii", "iv", "v"))
    return out


def jensen_energy_bound(rho, theta, phi=None):
    """Upper bound U(rho) <= varphi(int Phi(rho) dm) where r*Theta(r) =
    varphi(Phi(r)); varphi is evaluated through root-finding on Phi.

    Returns (U, bound)."""
    phi = phi or phi_from_theta(theta)
    U = internal_energy(rho, theta)
    area = 4 * np.pi
    # Jensen against the normalized uniform measure: varphi is concave for
    # the laws in scope, so U = area * mean(varphi(Phi(rho)))
    #                        <= area * varphi(mean(Phi(rho))).
    target = rho.mesh.integrate(phi.Phi(np.maximum(rho.values, 0.0))) / area

    hi = max(float(np.max(rho.values)), 1.0)
    while phi.Phi(hi) < target:
        hi *= 2
    r = brentq(lambda s: phi.Phi(s) - target, 0.0, hi, xtol=1e-14)
    bound = area * float(r * theta.theta(r)) if r > 0 else 0.0
    return U, bound
