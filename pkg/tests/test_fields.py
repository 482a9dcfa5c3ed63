"""Field pairs, residuals, decay tables, angular templates, and the
shipped polynomial 3-form families."""

import numpy as np
import pytest

from g2lab.forms import DIM, FormError, KForm, interior, wedge
from g2lab.fields import (
    ConstantG2Field,
    DecayTable,
    FieldPair,
    RadialProfilePair,
    abelian_generator,
    abelian_templates,
    canonical_templates,
    covariant_d,
    curvature,
    decay_profile,
    euclidean_field,
    interior_perturbation_field,
    linear_perturbation_field,
    monopole_residual,
    poly_field_pair,
    radial_perturbation_field,
    rotation_templates,
)
from g2lab.g2 import (
    coassociative,
    euclidean_phi,
    stabilizer_basis,
    structure_from_phi,
)
from g2lab.model_connection import (
    canonical_connection,
    flat_connection,
    pullback_to_cone,
    sphere_samples,
)
from g2lab.polyfield import Poly7


def canonical_cone():
    return pullback_to_cone(canonical_connection())


def connection_pair(a0):
    zero = np.zeros((a0.m, a0.m))
    return FieldPair(
        m=a0.m,
        A=lambda x: a0.coefficients(x[None, :])[0],
        sigma=lambda x: zero,
        dA=lambda x: a0.derivative(x[None, :])[0],
        dsigma=lambda x: np.zeros((DIM, a0.m, a0.m)),
    )


# -- field pairs and residuals ---------------------------------------------


def test_curvature_of_exact_abelian_pair():
    J = abelian_generator()
    # A_1 = x_2 J, A_2 = -x_1 J: F_12 = -2 J, everything else zero
    zero = Poly7()
    zp = [[zero, zero], [zero, zero]]

    def lie(p):
        return [[p * J[a][b] for b in range(2)] for a in range(2)]

    A_polys = [lie(Poly7.variable(1)), lie(-Poly7.variable(0))] + [zp] * 5
    pair = poly_field_pair(A_polys, zp, 2)
    F = curvature(pair, np.array([0.3, -0.2, 0.7, 0.1, 0.0, 0.5, 0.4]))
    expect = np.zeros((21, 2, 2))
    expect[0] = -2.0 * J
    assert np.max(np.abs(F.coeffs - expect)) < 1e-12


def test_fd_derivatives_match_exact_poly():
    J = abelian_generator()
    p = Poly7.variable(0) * Poly7.variable(3) + Poly7.variable(6)

    def lie(q):
        return [[q * J[a][b] for b in range(2)] for a in range(2)]

    A_polys = [lie(p)] * DIM
    pair = poly_field_pair(A_polys, lie(p), 2)
    fd_pair = FieldPair(m=2, A=pair.A, sigma=pair.sigma)
    x = np.array([0.4, -0.3, 0.2, 0.8, -0.1, 0.6, 0.5])
    assert np.max(np.abs(pair.dA(x) - fd_pair.derivative_A(x))) < 1e-6
    assert np.max(np.abs(pair.dsigma(x) - fd_pair.derivative_sigma(x))) < 1e-6


def test_annulus_enforced():
    pair = connection_pair(canonical_cone())
    pair.r_in, pair.r_out = 0.1, 1.0
    with pytest.raises(FormError):
        pair.check_point(np.full(DIM, 1.0))


def test_canonical_connection_is_monopole_for_phi0():
    pair = connection_pair(canonical_cone())
    G = ConstantG2Field(structure_from_phi(euclidean_phi()))
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(DIM)
        res = monopole_residual(pair, G, x)
        assert res.norm() < 1e-10


def test_covariant_d_of_zero_higgs_vanishes():
    pair = connection_pair(canonical_cone())
    d = covariant_d(pair, np.array([0.2, 0.5, -0.1, 0.3, 0.0, -0.4, 0.6]))
    assert d.norm() == 0.0


# -- decay profiling --------------------------------------------------------


def test_decay_profile_manufactured_slope():
    a0 = pullback_to_cone(flat_connection(2))
    theta, _ = abelian_templates()

    def A(x):
        r = np.linalg.norm(x)
        return np.sqrt(r) * theta.value(x[None, :])[0]

    pair = FieldPair(m=2, A=A, sigma=lambda x: np.zeros((2, 2)))
    radii = np.geomspace(0.05, 0.8, 8)
    table = decay_profile(pair, a0, radii, samples_per_sphere=16, l_max=1)
    rs, sups = table.sups(0)
    slope = np.polyfit(np.log(rs), np.log(sups), 1)[0]
    assert abs(slope - 0.5) < 0.02


def test_decay_table_csv_roundtrip(tmp_path):
    table = DecayTable(
        rows=[(0.5, 0, 1.25, 1.5), (0.25, 0, 0.625, 0.75), (0.25, 1, 0.1, 0.2)],
        samples_per_sphere=16,
    )
    path = tmp_path / "decay.csv"
    table.to_csv(path)
    back = DecayTable.from_csv(path)
    assert back.rows == table.rows
    rs, sups = back.sups(0)
    assert np.array_equal(rs, [0.5, 0.25])
    assert np.array_equal(sups, [1.25, 0.625])


def test_decay_table_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("radius,sup\n0.5,1.0\n")
    with pytest.raises(FormError):
        DecayTable.from_csv(path)


def test_decay_profile_rejects_out_of_annulus_radius():
    pair = connection_pair(canonical_cone())
    pair.r_in, pair.r_out = 0.1, 0.5
    with pytest.raises(FormError):
        decay_profile(pair, canonical_cone(), [0.05])


# -- angular templates ------------------------------------------------------


def template_points(n=12, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, DIM))
    return X / np.linalg.norm(X, axis=1, keepdims=True) * rng.uniform(
        0.3, 2.0, (n, 1)
    )


@pytest.mark.parametrize("template_set", [canonical_templates, abelian_templates])
def test_templates_antisymmetric_and_degree_zero(template_set):
    X = template_points()
    for tpl in template_set():
        V1 = tpl.value(X)
        V2 = tpl.value(2.5 * X)
        assert np.max(np.abs(V1 + np.swapaxes(V1, -1, -2))) < 1e-12
        assert np.max(np.abs(V1 - V2)) < 1e-10 * max(1.0, np.max(np.abs(V1)))


def test_template_value_consistent_across_hemisphere_dispatch():
    theta, _, _ = canonical_templates()
    X = template_points(seed=2)
    X[:, 6] = np.abs(X[:, 6]) + 0.1  # all upper hemisphere
    from g2lab.model_connection import CHART_PLUS

    assert np.allclose(theta.value(X), theta.value(X, chart=CHART_PLUS))


def test_analytic_template_derivative_matches_finite_differences():
    theta, _, sigma0 = canonical_templates()
    X = template_points(n=4, seed=3)
    for tpl in (theta, sigma0):
        d = tpl.derivative(X)
        h = 1e-6
        for i in range(DIM):
            Xp = X.copy()
            Xp[:, i] += h
            Xm = X.copy()
            Xm[:, i] -= h
            fd = (tpl.value(Xp) - tpl.value(Xm)) / (2.0 * h)
            assert np.max(np.abs(d[:, i] - fd)) < 1e-7


def rotation_generator():
    B = stabilizer_basis()
    X = B[0]
    return X * np.sqrt(2.0) / np.linalg.norm(X)


def test_rotation_templates_validate_input():
    with pytest.raises(FormError):
        rotation_templates(np.eye(DIM))


def test_rotation_compensator_sources_the_curvature_contraction():
    """The covariant differential of the compensator 0-form is a constant
    multiple of the curvature-contraction 1-form divided by the radius."""
    from g2lab.model_connection import CHART_PLUS

    X = rotation_generator()
    theta, sigma = rotation_templates(X)
    a0 = canonical_cone()
    P = template_points(n=8, seed=4)
    P[:, 6] = np.abs(P[:, 6]) + 0.2  # pin one chart: the values are gauges
    A = a0.coefficients(P, chart=CHART_PLUS)
    s = sigma.value(P, chart=CHART_PLUS)
    ds = sigma.derivative(P)
    cov = ds + np.einsum("nimp,npq->nimq", A, s) - np.einsum(
        "nmp,nipq->nimq", s, A
    )
    th = theta.value(P)
    r = np.linalg.norm(P, axis=1)
    lhs = cov * r[:, None, None, None]  # degree 0, proportional to theta
    c = np.sum(lhs[0] * th[0]) / np.sum(th[0] * th[0])
    assert abs(c) > 1e-3
    assert np.max(np.abs(lhs - c * th)) < 1e-8 * max(1.0, np.max(np.abs(lhs)))


def test_nonanalytic_template_derivative_matches_finite_differences():
    theta, _ = rotation_templates(rotation_generator())
    assert not theta.analytic
    P = template_points(n=3, seed=5)
    P[:, 6] = np.abs(P[:, 6]) + 0.2
    d = theta.derivative(P)
    h = 1e-5
    from g2lab.model_connection import CHART_PLUS

    for i in range(DIM):
        Pp = P.copy()
        Pp[:, i] += h
        Pm = P.copy()
        Pm[:, i] -= h
        fd = (
            theta.value(Pp, chart=CHART_PLUS)
            - theta.value(Pm, chart=CHART_PLUS)
        ) / (2.0 * h)
        assert np.max(np.abs(d[:, i] - fd)) < 1e-5


# -- radial profile ansatz --------------------------------------------------


def small_profile():
    theta, _, sigma0 = canonical_templates()
    mesh = np.geomspace(1.0 / 64, 0.25, 24)
    f = 0.1 * mesh
    u = 0.05 * np.ones_like(mesh)
    return RadialProfilePair(
        mesh=mesh, f=f, u=u, base=canonical_cone(), theta=theta, sigma0=sigma0
    )


def test_profile_pair_validation():
    theta, _, sigma0 = canonical_templates()
    mesh = np.array([0.1, 0.1, 0.2])
    with pytest.raises(FormError):
        RadialProfilePair(mesh=mesh, f=mesh, u=mesh, base=canonical_cone(),
                          theta=theta, sigma0=sigma0)
    with pytest.raises(FormError):
        RadialProfilePair(mesh=np.array([0.1, 0.2]), f=np.zeros(3),
                          u=np.zeros(2), base=canonical_cone(),
                          theta=theta, sigma0=sigma0)


def test_profile_pair_zero_profiles_reproduce_base():
    prof = small_profile()
    prof.f[:] = 0.0
    prof.u[:] = 0.0
    pair = prof.as_field_pair()
    a0 = canonical_cone()
    x = np.array([0.05, 0.02, -0.03, 0.01, 0.06, -0.02, 0.04])
    assert np.allclose(pair.A(x), a0.coefficients(x[None, :])[0])
    assert np.max(np.abs(pair.sigma(x))) == 0.0


def test_profile_pair_field_evaluation_matches_ansatz():
    prof = small_profile()
    pair = prof.as_field_pair()
    x = np.array([0.04, -0.02, 0.05, 0.01, -0.03, 0.02, 0.06])
    r = np.linalg.norm(x)
    a0 = canonical_cone()
    expect = (
        a0.coefficients(x[None, :])[0]
        + 0.1 * r * prof.theta.value(x[None, :])[0]
    )
    assert np.max(np.abs(pair.A(x) - expect)) < 1e-10
    assert np.allclose(
        pair.sigma(x), 0.05 * prof.sigma0.value(x[None, :])[0]
    )


def test_profile_pair_derivatives_match_finite_differences():
    pair = small_profile().as_field_pair()
    x = np.array([0.04, -0.02, 0.05, 0.01, -0.03, 0.02, 0.06])
    fd = FieldPair(m=6, A=pair.A, sigma=pair.sigma, fd_step=1e-4)
    assert np.max(np.abs(pair.dA(x) - fd.derivative_A(x))) < 1e-5
    assert np.max(np.abs(pair.dsigma(x) - fd.derivative_sigma(x))) < 1e-5


def test_profile_pair_save_load_roundtrip(tmp_path):
    prof = small_profile()
    path = tmp_path / "profile.g2f"
    prof.save(path)
    back = RadialProfilePair.load(
        path, prof.base, prof.theta, prof.sigma0
    )
    assert np.array_equal(back.mesh, prof.mesh)
    assert np.array_equal(back.f, prof.f)
    assert np.array_equal(back.u, prof.u)


# -- shipped polynomial 3-form families -------------------------------------


def test_euclidean_field_constant():
    phi = euclidean_field()
    x = np.array([0.3, -0.1, 0.2, 0.4, 0.0, -0.2, 0.1])
    assert np.array_equal(phi.at(x).coeffs, euclidean_phi().coeffs)


def test_linear_perturbation_pointwise():
    eps = 0.3
    phi = linear_perturbation_field(eps)
    rng = np.random.default_rng(6)
    from g2lab.forms import basis_form

    for x in rng.standard_normal((5, DIM)):
        expect = euclidean_phi() + (eps * x[0]) * basis_form((0, 1, 2))
        assert np.allclose(phi.at(x).coeffs, expect.coeffs)


def test_interior_perturbation_pointwise():
    eps = 0.2
    psi0 = coassociative(euclidean_phi())
    rng = np.random.default_rng(7)
    for M in (None, rotation_generator()):
        phi = interior_perturbation_field(eps, M)
        Mmat = np.eye(DIM) if M is None else M
        for x in rng.standard_normal((5, DIM)):
            expect = euclidean_phi() + eps * interior(Mmat @ x, psi0)
            assert np.allclose(phi.at(x).coeffs, expect.coeffs, atol=1e-13)


def test_radial_perturbation_pointwise():
    eps = 0.15
    phi0 = euclidean_phi()
    rng = np.random.default_rng(8)
    for M in (None, rotation_generator()):
        phi = radial_perturbation_field(eps, M)
        Mmat = np.eye(DIM) if M is None else M
        for x in rng.standard_normal((5, DIM)):
            expect = phi0 + eps * wedge(KForm(1, x), interior(Mmat @ x, phi0))
            assert np.allclose(phi.at(x).coeffs, expect.coeffs, atol=1e-13)


def test_perturbation_fields_reject_bad_matrix():
    with pytest.raises(FormError):
        interior_perturbation_field(0.1, np.eye(3))
    with pytest.raises(FormError):
        radial_perturbation_field(0.1, np.eye(3))
