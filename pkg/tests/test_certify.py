import json
import math

import numpy as np
import pytest

import oracles
from generators import random_lti_lurie, random_networked, spd_matrix
from kcontract.certify import (
    Certificate, DomainGrid, GridCapError, alpha_k, ari_constant_theta, certify_biochem,
    certify_lti_lurie, certify_networked, certify_thm1, h_matrix, monotone_escalate,
)
from kcontract.model import (
    Box, GlsModel, MetricSpec, ModelError, biochem, example31, lti_lurie, networked,
    tridiagonal_chain, tridiagonal_theta,
)
from kcontract.spectral import top_k_eig_sum


def linear_gls(F, phi=None, box=1.0):
    F = np.atleast_2d(F)
    n = F.shape[0]
    return lti_lurie(F, np.eye(n), np.eye(n), phi, state_domain=Box.cube(n, -box, box))


# ------------------------------------------------------------ h_matrix

def test_h_matrix_trivial_cases():
    I = MetricSpec.identity(2)
    np.testing.assert_allclose(h_matrix(linear_gls(-np.eye(2)), I, np.zeros(2), np.zeros(2)), 0, atol=1e-15)
    np.testing.assert_allclose(h_matrix(linear_gls(-2 * np.eye(2)), I, np.zeros(2), np.zeros(2)), -2 * np.eye(2))


def test_h_matrix_example31_against_finite_differences(rng):
    gls = example31().as_gls(0.8)
    q = 1.7
    for x in rng.uniform(0, 3, (10, 3)):
        u = rng.standard_normal(3)
        fx = oracles.fd_jacobian(lambda z: gls.field(z, u), x)
        fu = oracles.fd_jacobian(lambda w: gls.field(x, w), u)
        gx = oracles.fd_jacobian(gls.output, x)
        H = fx + fx.T + q * q * fu @ fu.T + gx.T @ gx / (q * q)
        np.testing.assert_allclose(h_matrix(gls, MetricSpec.scalar(3, q), x, u), H, atol=1e-5)


# ---------------------------------------------------------- certify_thm1

def test_thm1_decoupled_toy():
    m = GlsModel.from_strings(["-x1 + u1"], ["x1"], ["0"], n=1, m=1, p=1, state_domain=Box.cube(1, -1, 1))
    c = certify_thm1(m, MetricSpec.identity(1), 1, DomainGrid(m.state_domain, points_per_axis=5))
    assert (c.eta1, c.eta2, c.rate, c.verdict, c.mode) == (0.0, 1.0, 0.5, "certified", "thm1-B")
    assert c.details["conclusion_holds"]


def test_thm1_skew_symmetric_loop_is_not_certified():
    S = np.array([[0.0, 1, 0], [-1, 0, 2], [0, -2, 0]])
    m = linear_gls(S)
    for k in (1, 2, 3):
        c = certify_thm1(m, MetricSpec.identity(3), k, DomainGrid(m.state_domain, points_per_axis=2))
        assert c.eta1 == pytest.approx(-2 * k)
        assert c.eta2 == pytest.approx(k)
        assert c.verdict == "not-certified"
        assert c.worst_margin == pytest.approx(-k)


def test_thm1_tridiagonal_chain_with_conclusion_check():
    ch = tridiagonal_chain(5)
    metric = tridiagonal_theta(ch)
    grid = DomainGrid(ch.state_domain, ch.input_domain, points_per_axis=3, refine=300, seed=3)
    c = certify_thm1(ch, metric, 2, grid)
    assert c.certified
    assert c.details["conclusion_holds"] and c.details["conclusion_slack"] >= 0
    assert c.samples == 3 ** 6 + 300
    assert c.sigma1 <= c.sigma2
    assert c.grid_shape == [3] * 6


def test_thm1_u_scope():
    ch = tridiagonal_chain(3)
    metric = tridiagonal_theta(ch)
    box = DomainGrid(ch.state_domain, ch.input_domain, points_per_axis=3)
    closed = DomainGrid(ch.state_domain, None, points_per_axis=3)
    a = certify_thm1(ch, metric, 1, box)
    b = certify_thm1(ch, metric, 1, closed)
    # the closed-loop input set is a subset of the box, so it is no more conservative
    assert b.eta1 >= a.eta1 - 1e-12


def test_bc_side_consistency(rng):
    """Each eta2 path, on its own, gives a valid conclusion."""
    done = 0
    while done < 8:
        n = int(rng.integers(2, 5))
        A, B, C, phi = random_lti_lurie(rng, n)
        k = int(rng.integers(1, n + 1))
        P = spd_matrix(rng, n, 0.2)
        c = certify_lti_lurie(A, B, C, phi, P, k, DomainGrid(Box.cube(C.shape[0], -3, 3), points_per_axis=5))
        Theta = np.array(c.details["theta"])
        model = lti_lurie(A, B, C, phi)
        X = rng.uniform(-3, 3, (50, n))
        Jt = Theta @ model.closed_loop_jacobian(X) @ np.linalg.inv(Theta)
        lhs = top_k_eig_sum(Jt + np.swapaxes(Jt, -1, -2), k)
        for side in ("eta2_B", "eta2_C"):
            total = c.eta1 + c.details[side]
            if total > 0:
                assert np.all(lhs <= -total + 1e-8)
                done += 1


# ---------------------------------------------------------------- ARI

def test_ari_reduces_to_standard_riccati_inequality(rng):
    m = linear_gls(-np.eye(1))
    c = ari_constant_theta(m, np.eye(1), 1, DomainGrid(m.state_domain, points_per_axis=3))
    assert c.eta1 == pytest.approx(0.0, abs=1e-10)
    # k = 1, Theta = I: largest eta with A + A^T + B B^T + C^T C <= -eta I
    A, B, C, phi = random_lti_lurie(rng, 3)
    m = lti_lurie(A, B, C, phi, state_domain=Box.cube(3, -1, 1))
    c = ari_constant_theta(m, np.eye(3), 1, DomainGrid(m.state_domain, points_per_axis=2))
    ref = -np.linalg.eigvalsh(A + A.T + B @ B.T + C.T @ C).max()
    assert c.eta1 == pytest.approx(ref, abs=1e-9)
    assert c.details["ari_agrees"]


def test_ari_rejects_indefinite_p():
    m = linear_gls(-np.eye(2))
    with pytest.raises(ModelError):
        ari_constant_theta(m, np.diag([1.0, -1.0]), 1, DomainGrid(m.state_domain, points_per_axis=2))


# ---------------------------------------------------------------- LTI

def test_lti_closed_form():
    rho = 0.7
    A = -rho * np.eye(3) + np.array([[0, 1.0, 0], [-1, 0, 0.5], [0, -0.5, 0]])
    B = C = 0.1 * np.eye(3)
    c = certify_lti_lurie(A, B, C, ["0", "0", "0"], np.eye(3), 1, DomainGrid(Box.cube(3, -1, 1), points_per_axis=2))
    assert c.eta1 == pytest.approx(2 * rho - 0.02)
    assert c.eta2 == pytest.approx(0.01)
    assert c.certified and c.mode == "lti"
    assert abs(c.details["eq21_residual"]) < 1e-12


def test_lti_zero_input_matrix_uses_c_side():
    A = -np.eye(2)
    B = np.zeros((2, 1))
    C = np.array([[1.0, 0.0]])
    c = certify_lti_lurie(A, B, C, ["0.5*tanh(y1)"], np.eye(2), 2, DomainGrid(Box.cube(1, -2, 2), points_per_axis=5))
    assert c.details["eta2_B"] == 0.0
    assert c.details["eta2_C"] == pytest.approx(0.75)
    assert c.details["side"] == "C"


def test_lti_identity_example():
    c = certify_lti_lurie(-np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)), ["sin(y1)"], np.eye(2), 1,
                          DomainGrid(Box.cube(1, -1, 1), points_per_axis=3))
    assert c.eta1 == pytest.approx(2.0) and c.certified


def test_lti_dimension_mismatch():
    with pytest.raises(ModelError):
        certify_lti_lurie(-np.eye(2), np.ones((3, 1)), np.ones((1, 2)), ["y1"], np.eye(2), 1,
                          DomainGrid(Box.cube(1, -1, 1)))


# ----------------------------------------------------------- networked

def test_networked_examples():
    net = networked(np.eye(3), np.eye(3), ["3*s"] * 3, "tanh", derivative_bounds=[(3, 3)] * 3, jf_norm_bound=1.0)
    c = certify_networked(net, 2)
    assert c.details["alpha_k"] == 3.0 and c.details["lhs"] == 2.0 and c.certified
    zero = networked(np.zeros((3, 3)), np.zeros((3, 3)), ["s"] * 3, "tanh",
                     derivative_bounds=[(1, 1)] * 3, jf_norm_bound=1.0)
    for k in (1, 2, 3):
        c = certify_networked(zero, k)
        assert c.certified and c.details["alpha_k"] == 1.0 and c.details["lhs"] == 0.0
        assert c.eta1 == pytest.approx(0.75) and c.eta2 == pytest.approx(k / 4)


def test_networked_single_output(rng):
    W1 = rng.standard_normal((4, 1))
    cvec = np.zeros((1, 4))
    cvec[0, 2] = 1.7
    net = networked(W1, cvec, ["2*s"] * 4, "tanh", derivative_bounds=[(2, 2)] * 4, jf_norm_bound=0.9)
    for k in (1, 2, 3):
        c = certify_networked(net, k)
        expected = 0.81 * 1.7 ** 2 * np.linalg.norm(W1) ** 2
        assert c.details["lhs"] == pytest.approx(expected)


def test_networked_certificate_parameters():
    net = example31()
    c = certify_networked(net, 2)
    a, lhs, g = c.details["alpha_k"], c.details["lhs"], c.details["gamma"]
    assert math.sqrt(lhs / 2) < g < a
    assert c.details["p"] == pytest.approx(a / g ** 2)
    assert c.eta1 == pytest.approx((a * a - g * g) / a)
    assert c.eta2 == pytest.approx((2 - lhs / g ** 2) / c.details["p"])
    assert c.metric == {"kind": "scalar", "q": math.sqrt(c.details["p"])}


def test_networked_requires_bounds():
    net = networked(np.eye(2), np.eye(2), ["s", "s"], "tanh")
    with pytest.raises(ModelError):
        certify_networked(net, 1)


def test_networked_failure_reports_slack():
    net = networked(100 * np.eye(2), np.eye(2), ["s", "s"], "tanh", derivative_bounds=[(1, 1)] * 2, jf_norm_bound=1)
    c = certify_networked(net, 1)
    assert not c.certified and c.details["slack"] == pytest.approx(1 - 1e4)


def test_networked_scaling_invariance(rng):
    """Rescaling x -> c z (with d, f rescaled accordingly) keeps every bound."""
    for _ in range(10):
        n = 3
        W1 = rng.standard_normal((n, n))
        W2 = rng.standard_normal((n, n))
        a = rng.uniform(0.5, 3, n)
        bounds = [(ai, ai + 0.5) for ai in a]
        jf = 1.0
        scale = float(rng.uniform(0.1, 10))
        d = [f"{ai}*s + 0.5*sin(s)^2" for ai in a]
        d_scaled = [f"({ai}*({scale}*s) + 0.5*sin({scale}*s)^2)/{scale}" for ai in a]
        net = networked(W1, W2, d, "tanh", derivative_bounds=bounds, jf_norm_bound=jf)
        net_s = networked(W1, W2, d_scaled, f"tanh({scale}*s)/{scale}", derivative_bounds=bounds, jf_norm_bound=jf)
        x = rng.standard_normal(n)
        np.testing.assert_allclose(net_s.field(x / scale), net.field(x) / scale, atol=1e-12)
        for k in (1, 2, 3):
            assert certify_networked(net, k).verdict == certify_networked(net_s, k).verdict


# -------------------------------------------------------------- biochem

def test_biochem_examples():
    c = certify_biochem(0.0, [(2, 2)], 1)
    assert c.details["alpha_k"] == 2 and c.certified
    c = certify_biochem(0.25, [(0, 1), (3, 3), (3, 3)], 2)
    assert c.details["alpha_k"] == 1.5 and c.certified
    c = certify_biochem(0.25, [(-1, 1), (3, 3), (3, 3)], 2)
    assert c.details["alpha_k"] == 1.0 and not c.certified and not c.details["alpha_gt_1"]
    c = certify_biochem(2.0, [(1.5, 2), (1.5, 2)], 1)
    assert not c.certified and not c.details["r_condition"]


def test_biochem_agrees_with_networked(rng):
    for _ in range(30):
        n = int(rng.integers(2, 5))
        lows = rng.uniform(0.2, 3, n)
        bounds = [(lo, lo + 1) for lo in lows]
        rp = float(rng.uniform(0, 3))
        net = biochem(n, ["s"] * n, "s", d_bounds=bounds, r_prime_bound=rp)
        for k in range(1, n + 1):
            assert certify_biochem(rp, bounds, k).verdict == certify_networked(net, k).verdict


def test_alpha_k_uses_k_smallest_lower_bounds():
    b = [(3, 3), (0, 1), (-1, 5), (2, 2)]
    assert alpha_k(b, 1) == -1
    assert alpha_k(b, 2) == -0.5
    assert alpha_k(b, 4) == 1.0


# ---------------------------------------------------------- escalation

def test_monotone_escalate():
    net = example31("literal")
    r = monotone_escalate(net, 1)
    assert r.k_star == 3 and not r.certificates[2].certified and r.certificates[3].certified
    net = example31("implied")
    assert monotone_escalate(net, 2).k_star == 2
    assert monotone_escalate(net, 2).certificates[3].certified
    easy = networked(np.zeros((2, 2)), np.zeros((2, 2)), ["s", "s"], "tanh",
                     derivative_bounds=[(1, 1)] * 2, jf_norm_bound=1.0)
    assert monotone_escalate(easy, 1).k_star == 1
    huge = networked(1e3 * np.eye(2), np.eye(2), ["s", "s"], "tanh",
                     derivative_bounds=[(1, 1)] * 2, jf_norm_bound=1.0)
    r = monotone_escalate(huge, 1)
    assert r.k_star is None and all(s < 0 for s in r.slacks.values())


def test_monotonicity_random(rng):
    for _ in range(30):
        net = random_networked(rng)
        r = monotone_escalate(net, 1)
        if r.k_star is not None:
            assert all(r.certificates[k].certified for k in range(r.k_star, net.n + 1))


# ----------------------------------------------------- certificate & grid

def test_certificate_invariants_and_json():
    c = Certificate(k=2, eta1=0.5, eta2=0.25, verdict="certified", mode="lti", worst_margin=0.1)
    assert c.rate == 0.375
    d = json.loads(c.to_json())
    for key in ("k", "eta1", "eta2", "rate", "verdict", "mode", "worst_margin",
                "argmin_point", "sigma1", "sigma2", "samples", "seed"):
        assert key in d
    with pytest.raises(ValueError):
        Certificate(k=1, eta1=-1, eta2=0.5, verdict="certified", mode="lti", worst_margin=0)
    with pytest.raises(ValueError):
        Certificate(k=1, eta1=1, eta2=0.5, verdict="maybe", mode="lti", worst_margin=0)
    nan = Certificate(k=1, eta1=float("-inf"), eta2=0, verdict="not-certified", mode="lti", worst_margin=float("nan"))
    assert json.loads(nan.to_json())["eta1"] is None


def test_domain_grid():
    g = DomainGrid(Box.cube(2, 0, 1), Box.cube(1, -1, 1), points_per_axis=3, refine=5, seed=9)
    X, U = g.samples()
    assert X.shape == (32, 2) and U.shape == (32, 1)
    X2, _ = g.samples()
    np.testing.assert_array_equal(X, X2)
    assert np.all((X >= 0) & (X <= 1))
    with pytest.raises(GridCapError):
        DomainGrid(Box.cube(10, 0, 1), points_per_axis=5).samples()
    with pytest.raises(GridCapError):
        DomainGrid(Box((0.0,), (math.inf,)), points_per_axis=3).samples()
    X, U = DomainGrid(Box.cube(2, 0, 2), points_per_axis=1).samples()
    np.testing.assert_array_equal(X, [[1, 1]]) and U is None


def test_u_scope_is_recorded():
    ch = tridiagonal_chain(2)
    metric = tridiagonal_theta(ch)
    a = certify_thm1(ch, metric, 1, DomainGrid(ch.state_domain, ch.input_domain, points_per_axis=2))
    b = certify_thm1(ch, metric, 1, DomainGrid(ch.state_domain, None, points_per_axis=2))
    assert a.details["u_scope"] == "box" and b.details["u_scope"] == "closed-loop"
