"""End-to-end acceptance gate: one test per criterion, each recorded as a
PASS/FAIL line in the terminal summary."""

import time

import numpy as np
import pytest
from scipy.linalg import expm

from kcontract.certify import (
    DomainGrid, ari_constant_theta, certify_biochem, certify_lti_lurie, certify_networked,
)
from kcontract.compound import add_compound, mult_compound, parallelotope_volume
from kcontract.model import (
    Box, MetricSpec, biochem, example31, hopfield, lti_lurie, networked,
    tridiagonal_chain, tridiagonal_theta,
)
from kcontract.sim import (
    LinearField, SimConfig, equilibrium_residual_1d, fig2_initials, integrate,
    integrate_with_variational, log_slope, random_frame,
)
from kcontract.spectral import singular_values_desc, top_k_eig_sum

import oracles
from generators import lti_model, random_lti_lurie, random_networked, spd_matrix, stable_matrix


def _rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(1.0, np.linalg.norm(b))


# ------------------------------------------------------------------ 1

def test_criterion_01_compound_algebra(record, rng):
    start = time.perf_counter()
    worst_cb = worst_minor = worst_prod = worst_sum = 0.0
    eps_ratios = []
    for _ in range(200):
        n, p, m = rng.integers(1, 7, size=3)
        k = int(rng.integers(1, min(n, p, m) + 1))
        A = rng.standard_normal((n, p))
        B = rng.standard_normal((p, m))
        lhs = mult_compound(A @ B, k)
        rhs = mult_compound(A, k) @ mult_compound(B, k)
        worst_cb = max(worst_cb, _rel(lhs, rhs))
        worst_minor = max(worst_minor, _rel(mult_compound(A, k), oracles.minors(A, k)))

        s = int(rng.integers(1, 7))
        kk = int(rng.integers(1, s + 1))
        S = rng.standard_normal((s, s))
        lam = np.linalg.eigvals(S)
        prods = oracles.k_products(lam, kk)
        sums = oracles.k_sums(lam, kk)
        scale_p = max(1.0, np.abs(prods).max())
        scale_s = max(1.0, np.abs(sums).max())
        worst_prod = max(worst_prod, oracles.multiset_distance(np.linalg.eigvals(mult_compound(S, kk)), prods) / scale_p)
        worst_sum = max(worst_sum, oracles.multiset_distance(np.linalg.eigvals(add_compound(S, kk)), sums) / scale_s)

        # (I + eps S)^(k) = I + eps S^[k] + O(eps^2)
        I = np.eye(s)
        Ik = np.eye(mult_compound(I, kk).shape[0])
        r = [np.linalg.norm(mult_compound(I + e * S, kk) - Ik - e * add_compound(S, kk)) for e in (1e-3, 1e-4)]
        if r[0] > 1e-12:
            eps_ratios.append(r[0] / r[1])
    elapsed = time.perf_counter() - start
    quad = all(70 < q < 130 for q in eps_ratios)
    ok = worst_cb <= 1e-9 and worst_minor <= 1e-9 and worst_prod <= 1e-7 and worst_sum <= 1e-7 and quad and elapsed < 10
    record(1, ok, f"Cauchy-Binet {worst_cb:.1e}, minors {worst_minor:.1e}, spectra {worst_prod:.1e}/{worst_sum:.1e}, "
                  f"eps-ratio in [{min(eps_ratios):.1f},{max(eps_ratios):.1f}], {elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------------ 2

def test_criterion_02_volume_oracle(record, rng):
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        k = int(rng.integers(1, n + 1))
        V = rng.standard_normal((n, k))
        vol = parallelotope_volume(V.T)
        ref = oracles.gram_volume(V)
        worst = max(worst, abs(vol - ref) / max(1.0, ref))
    ok = worst <= 1e-9
    record(2, ok, f"worst relative error {worst:.2e}")
    assert ok


# ------------------------------------------------------------------ 3

def test_criterion_03_singular_value_product_inequality(record, rng):
    worst = np.inf
    checks = 0
    for _ in range(500):
        m, p, n = rng.integers(1, 7, size=3)
        A = rng.standard_normal((m, p)) * rng.uniform(0.1, 10)
        B = rng.standard_normal((p, n)) * rng.uniform(0.1, 10)
        sab = singular_values_desc(A @ B)
        sa, sb = singular_values_desc(A), singular_values_desc(B)
        r = min(sa.size, sb.size)
        prod = sa[:r] * sb[:r]
        for s in (1, 2):
            for k in range(1, sab.size + 1):
                rhs = np.sum(prod[:k] ** s) if k <= r else np.sum(prod ** s)
                slack = rhs - np.sum(sab[:k] ** s)
                worst = min(worst, slack / max(1.0, rhs))
                checks += 1
    ok = worst >= -1e-9
    record(3, ok, f"{checks} partial sums, minimum scaled slack {worst:.2e}")
    assert ok


# ------------------------------------------------------------------ 4

def test_criterion_04_biochem_certification(record):
    implied = certify_biochem(0.25, [(0, 1), (3, 3), (3, 3)], 2)
    literal = certify_biochem(0.25, [(-1, 1), (3, 3), (3, 3)], 2)
    ok = (implied.details["alpha_k"] == 1.5 and implied.verdict == "certified"
          and literal.details["alpha_k"] == 1.0 and literal.verdict == "not-certified"
          and literal.details["alpha_gt_1"] is False)
    record(4, ok, f"alpha_2 = {implied.details['alpha_k']} ({implied.verdict}); "
                  f"literal bound alpha_2 = {literal.details['alpha_k']} ({literal.verdict})")
    assert ok


# ------------------------------------------------------------------ 5, 6

@pytest.fixture(scope="module")
def fig2_runs():
    net = example31()
    X0 = fig2_initials(42)
    start = time.perf_counter()
    trajs = [integrate(net, x0, SimConfig(200.0)) for x0 in X0]
    return net, X0, trajs, time.perf_counter() - start


def test_criterion_05_fig2_convergence(record, fig2_runs):
    net, X0, trajs, elapsed = fig2_runs
    worst_f = worst_rel = worst_res = 0.0
    for tr in trajs:
        e = tr.final
        worst_f = max(worst_f, np.linalg.norm(net.field(e)))
        worst_rel = max(worst_rel, abs(e[0] - 9 * e[2]), abs(e[1] - 3 * e[2]))
        worst_res = max(worst_res, abs(equilibrium_residual_1d(e[2])))
    inside = bool(np.all(X0 >= 0) and np.all(X0[:, 1:] <= 5) and np.all(X0[:, 0] <= 5.5))
    ok = worst_f < 1e-6 and worst_rel < 1e-4 and worst_res < 1e-6 and elapsed < 30 and inside
    record(5, ok, f"max |f_cl(x(T))| {worst_f:.1e}, max |e1-9e3|,|e2-3e3| {worst_rel:.1e}, "
                  f"max residual {worst_res:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_06_two_volume_decay(record, fig2_runs):
    net, X0, _, _ = fig2_runs
    results = []
    for i, x0 in enumerate(X0):
        _, vol = integrate_with_variational(net, x0, random_frame(3, 2, 100 + i), SimConfig(200.0))
        half = vol.times >= vol.times[-1] / 2
        results.append((vol.logvol[-1] - vol.logvol[0], log_slope(vol.times[half], vol.logvol[half])))
    ok = all(d < 0 and s < 0 for d, s in results)
    record(6, ok, "logvol(T)-logvol(0) max %.1f, final-half slope max %.3f"
           % (max(d for d, _ in results), max(s for _, s in results)))
    assert ok


# ------------------------------------------------------------------ 7

def test_criterion_07_conclusion_self_consistency(record, rng):
    certified, worst, tries = 0, np.inf, 0
    while certified < 20:
        tries += 1
        assert tries < 200, "could not generate certified instances"
        n = int(rng.integers(1, 6))
        k = int(rng.integers(1, n + 1))
        A, B, C, phi = random_lti_lurie(rng, n)
        P = spd_matrix(rng, n, 0.3)
        p = C.shape[0]
        cert = certify_lti_lurie(A, B, C, phi, P, k, DomainGrid(Box.cube(p, -3, 3), points_per_axis=7 if p <= 3 else 5))
        if not cert.certified:
            continue
        certified += 1
        Theta = np.array(cert.details["theta"])
        Ti = np.linalg.inv(Theta)
        model = lti_lurie(A, B, C, phi)
        X = rng.uniform(-3, 3, (100, n))
        Jt = Theta @ model.closed_loop_jacobian(X) @ Ti
        lhs = top_k_eig_sum(Jt + np.swapaxes(Jt, -1, -2), k)
        worst = min(worst, float(np.min(-(cert.eta1 + cert.eta2) + 1e-8 - lhs)))
    ok = worst >= 0
    record(7, ok, f"20 certified instances x 100 points, minimum slack {worst:.3e}")
    assert ok


# ------------------------------------------------------------------ 8

def test_criterion_08_ari_equivalence(record, rng):
    gaps = []
    for i in range(20):
        if i % 2 == 0:
            n = int(rng.integers(1, 5))
            A, B, C, phi = random_lti_lurie(rng, n)
            model = lti_model(A, B, C, phi)
            grid = DomainGrid(model.state_domain, points_per_axis=3)
        else:
            n = int(rng.integers(2, 5))
            model = tridiagonal_chain(n)
            grid = DomainGrid(model.state_domain, model.input_domain, points_per_axis=3)
        k = int(rng.integers(1, n + 1))
        cert = ari_constant_theta(model, spd_matrix(rng, n), k, grid)
        gaps.append(abs(cert.eta1 - cert.details["eta1_eigen_form"]))
    ok = max(gaps) <= 1e-6
    record(8, ok, f"max |eta1(ARI) - eta1(eigen)| = {max(gaps):.2e} over 20 instances")
    assert ok


# ------------------------------------------------------------------ 9

def test_criterion_09_monotonicity(record, rng):
    counter, nontrivial = 0, 0
    for _ in range(50):
        net = random_networked(rng)
        verdicts = [certify_networked(net, k).certified for k in range(1, net.n + 1)]
        for a, b in zip(verdicts, verdicts[1:]):
            counter += a and not b
        nontrivial += any(verdicts) and not all(verdicts)
    ok = counter == 0
    record(9, ok, f"{counter} counterexamples; {nontrivial} instances change verdict with k")
    assert ok


# ------------------------------------------------------------------ 10

def test_criterion_10_lti_volume_oracle(record, rng):
    worst = 0.0
    cases = 0
    for n in range(1, 5):
        A = stable_matrix(rng, n)
        for k in range(1, n + 1):
            W0 = rng.standard_normal((n, k))
            W0k = mult_compound(W0, k)[:, 0]
            for t in (0.5, 1.0, 2.0):
                _, vol = integrate_with_variational(LinearField(A), rng.standard_normal(n), W0, SimConfig(t))
                ref = np.linalg.norm(expm(add_compound(A, k) * t) @ W0k)
                got = np.exp(vol.logvol[-1])
                worst = max(worst, abs(got - ref) / max(1.0, ref))
                cases += 1
    ok = worst <= 1e-6
    record(10, ok, f"{cases} cases, worst error {worst:.2e}")
    assert ok


# ------------------------------------------------------------------ 11

def _builtin_instances(rng):
    n = 4
    W1 = rng.standard_normal((n, 3))
    W2 = rng.standard_normal((3, n))
    A, B, C, _ = random_lti_lurie(rng, 3)
    return [
        ("example31", example31(), Box.cube(3, 0, 5)),
        ("biochem", biochem(4, ["sin(s) + 2*s", "s + s^3", "exp(-s) + 3*s", "tanh(s) + s"],
                             "s^2/(1 + s^2)"), Box.cube(4, 0, 3)),
        ("networked", networked(W1, W2, ["s", "2*s + sin(s)", "s^3 + s", "exp(s)"], "tanh"),
         Box.cube(n, -2, 2)),
        ("hopfield", hopfield(np.diag([1.0, 2, 3, 4]), W1, W2, "tanh"), Box.cube(n, -2, 2)),
        ("lti_lurie", lti_lurie(A, B, C, [f"sin(y{i + 1}) + y{i + 1}^3" for i in range(C.shape[0])]),
         Box.cube(3, -2, 2)),
        ("tridiagonal_chain", tridiagonal_chain(5), Box.cube(5, -1, 1)),
    ]


def test_criterion_11_symbolic_vs_numeric_jacobians(record, rng):
    worst = {}
    for name, model, box in _builtin_instances(rng):
        gls = model.as_gls() if hasattr(model, "as_gls") else model
        err = 0.0
        for x in rng.uniform(box.low, box.high, (100, box.dim)):
            u = rng.standard_normal(gls.m)
            checks = [
                (gls.closed_loop_jacobian(x), oracles.fd_jacobian(gls.closed_loop_field, x)),
                (gls.fx(x, u), oracles.fd_jacobian(lambda z: gls.field(z, u), x)),
                (gls.fu(x, u), oracles.fd_jacobian(lambda w: gls.field(x, w), u)),
            ]
            if hasattr(model, "jacobian"):
                checks.append((model.jacobian(x), oracles.fd_jacobian(model.field, x)))
            for J, Jfd in checks:
                err = max(err, _rel(J, Jfd))
        worst[name] = err
    ok = max(worst.values()) <= 1e-5
    record(11, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# ------------------------------------------------------------------ 12

def test_criterion_12_grid_performance(record):
    from kcontract.certify import certify_thm1

    model = tridiagonal_chain(10)
    metric = tridiagonal_theta(model)
    times = {}
    for k in (1, 2, 3):
        grid = DomainGrid(model.state_domain, model.input_domain, points_per_axis=0, refine=10_000, seed=k)
        start = time.perf_counter()
        cert = certify_thm1(model, metric, k, grid)
        times[k] = time.perf_counter() - start
        assert cert.samples == 10_000
    ok = max(times.values()) < 60
    record(12, ok, ", ".join(f"k={k}: {t:.2f}s" for k, t in times.items()))
    assert ok
