"""Acceptance criteria 1-9; each test records one PASS/FAIL line shown in the terminal summary."""
import time
from math import comb, sqrt

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from conftest import ACCEPTANCE_LINES
from khessian.condh import RhsSpec, audit, root_regularity_probe, shift
from khessian.expr import parse
from khessian.geometry import DomainSpec, default_grid, is_k1_convex
from khessian.hessop import GridField, admissibility_mask, sk_field
from khessian.lab import DEFAULT_SCHEDULE, concavity_experiment, maclaurin_constant_experiment
from khessian.solver import ProblemSpec, SolveOptions, comparison_check, path, prepare, solve, two_sided_bound
from khessian.symfun import sample_cone, sigma, sigma_all, sigma_grad
from oracles import central_gradient, laplacian_7pt, sigma_enum_all_exact

BALL = DomainSpec.ball(3, 1.0)
RADIAL_F = "45*(x1^2+x2^2+x3^2)"
RADIAL = ProblemSpec(3, 2, BALL, RADIAL_F, "0", 1e-6)
DUMBBELL = DomainSpec.levelset(3, "x2^2 + x3^2 - (0.04 + 2*x1^2 - x1^4)", -1.6, 1.6)


def exact(x):
    return np.linalg.norm(x, axis=-1) ** 3 - 1.0


def record(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


class Hygiene:
    """Checks every accepted iterate of every run it is attached to."""

    def __init__(self):
        self.iterates = 0
        self.inadmissible = []
        self.non_decreasing = []
        self.bound_failures = []
        self.solutions = 0

    def options(self, p, schedule=None, **kw):
        fvals = parse(p.f)
        thetas = list(schedule) if schedule is not None else [p.theta]
        state = {"last": None, "res": None, "stage": -1}

        def check(i, u):
            self.iterates += 1
            if i == 0:
                state["stage"] += 1
            theta = thetas[min(state["stage"], len(thetas) - 1)]
            inner = u.layout.interior
            if not admissibility_mask(u, p.k, strict=True)[inner].all():
                self.inadmissible.append((p.f, i))
            s = np.maximum(sk_field(u, p.k).interior_values(), 0.0)
            target = fvals(u.layout.interior_points()) + theta
            res = float(np.max(np.abs(s ** (1.0 / p.k) - target ** (1.0 / p.k))))
            # a callback without a new iteration count starts a new Newton stage
            if i > 0 and i > state["last"] and not res < state["res"]:
                self.non_decreasing.append((p.f, i, state["res"], res))
            state["last"], state["res"] = i, res

        return SolveOptions(callback=check, **kw)

    def solution(self, u, report):
        self.solutions += 1
        h = report.residual_history
        if any(not b < a for a, b in zip(h, h[1:])):
            self.non_decreasing.append(("history", h))
        tsb = two_sided_bound(u)
        if not tsb["holds"]:
            self.bound_failures.append(tsb)


HYGIENE = Hygiene()


def hygienic_solve(p, g, u0=None):
    u, rep = solve(p, g, u0, opts=HYGIENE.options(p))
    HYGIENE.solution(u, rep)
    return u, rep


@pytest.fixture(scope="module")
def radial33():
    g = default_grid(BALL, 33)
    t = time.perf_counter()
    u, rep = hygienic_solve(RADIAL, g)
    return u, rep, time.perf_counter() - t


@pytest.fixture(scope="module")
def radial65():
    u, rep = hygienic_solve(RADIAL, default_grid(BALL, 65))
    return u, rep


@pytest.fixture(scope="module")
def radial_path():
    rep = path(RADIAL, default_grid(BALL, 33), DEFAULT_SCHEDULE, opts=HYGIENE.options(RADIAL, DEFAULT_SCHEDULE))
    assert rep.complete, rep.failure
    c11 = [e.c11_proxy for e in rep.entries]
    return {"c11_series": c11, "max_over_min": max(c11) / min(c11),
            "l1_residual_series": [e.l1_residual_to_f for e in rep.entries], "path_object": rep}


def _errors(u):
    x = u.layout.interior_points()
    err = np.abs(u.interior_values() - exact(x))
    return float(err.max()), float(err[np.linalg.norm(x, axis=-1) >= 0.1].max())


def test_criterion_1_radial_example(radial33, radial65):
    u33, rep33, wall = radial33
    u65, _ = radial65
    e33, o33 = _errors(u33)
    e65, o65 = _errors(u65)
    ratio, ratio_out = e33 / e65, o33 / o65
    order, order_out = np.log2(ratio), np.log2(ratio_out)
    ok = (rep33.converged and rep33.iterations <= 25 and e33 <= 1e-2 and ratio >= 1.8 and order >= 0.85
          and order_out >= 1.9 and wall <= 60.0)
    record(1, ok, f"m=33 err {e33:.3e} ({rep33.iterations} its, {wall:.1f} s), m=65 err {e65:.3e}, "
                  f"factor {ratio:.2f} (order {order:.2f}; r>=0.1 order {order_out:.2f})")


def test_criterion_2_condition_h_audit():
    g = default_grid(BALL, 33)
    f = RhsSpec.from_expression(RADIAL_F, 2)
    rep = audit(f, g, domain=BALL)
    probe = root_regularity_probe(f, g, BALL)
    rel = abs(rep.c0_gradient - 6 * sqrt(5)) / (6 * sqrt(5))
    slope = probe.c11_proxy_growth_exponent
    ok = rel <= 1e-3 and abs(rep.c0_hessian) <= 1e-9 and abs(slope + 1.0) <= 0.15
    record(2, ok, f"c0_gradient {rep.c0_gradient:.6f} (rel {rel:.1e}), c0_hessian {rep.c0_hessian:.1e}, "
                  f"growth exponent {slope:.3f}")


def test_criterion_3_shift_property():
    g = default_grid(BALL, 33)
    worst = -np.inf
    for text, k in [(RADIAL_F, 2), ("(x1 - 0.2)^2 * (1 + x2^2)", 2), ("x1^2 + 0.5*x2^4", 3),
                    ("(x1^2 + x2^2)^2", 3)]:
        f = RhsSpec.from_expression(text, k)
        base = audit(f, g, domain=BALL)
        for eps in (1e-6, 1e-3, 1.0):
            s = audit(shift(f, eps), g, domain=BALL)
            worst = max(worst, s.c0_gradient - base.c0_gradient, s.c0_hessian - base.c0_hessian)
    record(3, worst <= 1e-9, f"largest increase of a constant under f -> f+eps: {worst:.2e}")


def test_criterion_4_algebra():
    t = time.perf_counter()
    worst_cone = worst_cube = worst_grad = worst_euler = 0.0
    rng = np.random.default_rng(2024)
    for n in range(1, 9):
        # package sampler: uniform on [-1, 2]^n restricted to the cone Gamma_k
        for k in range(1, n + 1):
            lam = sample_cone(n, k, 1000 // n + 1, rng)
            s = sigma_all(lam)
            for i in range(lam.shape[0]):
                ex = np.array(sigma_enum_all_exact(lam[i])[:k])
                worst_cone = max(worst_cone, float(np.max(np.abs(s[i, :k] - ex) / np.abs(ex))))
            g = sigma_grad(lam, k)
            for i in range(0, lam.shape[0], 10):
                fd = central_gradient(lambda x: sigma(x, k), lam[i], 1e-5)
                worst_grad = max(worst_grad, float(np.max(np.abs(g[i] - fd)) / max(np.max(np.abs(g[i])), 1.0)))
            euler = np.einsum("pi,pi->p", g, lam)
            worst_euler = max(worst_euler, float(np.max(np.abs(euler - k * s[:, k - 1]) / (k * s[:, k - 1]))))
        # the whole cube, relative to sigma_k(|lam|) where cancellation makes sigma_k itself tiny
        lam = rng.uniform(-1.0, 2.0, (1000, n))
        s = sigma_all(lam)
        for i in range(1000):
            ex = np.array(sigma_enum_all_exact(lam[i]))
            scale = np.array(sigma_enum_all_exact(np.abs(lam[i])))
            worst_cube = max(worst_cube, float(np.max(np.abs(s[i] - ex) / scale)))
    sampled = {"concavity": 0, "maclaurin": 0}
    for n in range(1, 5):
        for k in range(1, n + 1):
            sampled["concavity"] += concavity_experiment(n, k, 100_000, seed=n * 10 + k)["violations"]
            sampled["maclaurin"] += maclaurin_constant_experiment(n, k, 100_000, seed=n * 10 + k)["violations"]
    wall = time.perf_counter() - t
    ok = (worst_cone <= 1e-12 and worst_cube <= 1e-12 and worst_grad <= 5e-6 and worst_euler <= 1e-12
          and sampled["concavity"] == 0 and sampled["maclaurin"] == 0 and wall <= 30.0)
    record(4, ok, f"sigma rel {worst_cone:.1e} (cone), {worst_cube:.1e} (cube, vs sigma_k(|lam|)); "
                  f"grad {worst_grad:.1e}; Euler {worst_euler:.1e}; violations {sampled}; {wall:.1f} s")


def test_criterion_5_degenerations():
    p1 = ProblemSpec(3, 1, BALL, RADIAL_F, "0.5*(x1^2+x2^2+x3^2)", 1e-6)
    u1, _ = hygienic_solve(p1, default_grid(BALL, 17))
    L, off = laplacian_7pt(u1.layout)
    x = u1.layout.interior_points()
    direct = spla.spsolve(L.tocsc(), parse(RADIAL_F)(x) + 1e-6 - off)
    gap = float(np.max(np.abs(u1.interior_values() - direct)))

    box = DomainSpec.box((1.0, 1.0))
    p2 = ProblemSpec(2, 2, box, "1", "0.5*(x1^2+x2^2)", 1e-12)
    g2 = default_grid(box, 33)
    lay = prepare(p2, g2)
    u2, rep2 = hygienic_solve(p2, g2, GridField.sample(lay, lambda y: 0.5 * (y**2).sum(-1)))
    ok = gap <= 1e-8 and rep2.final_residual <= 1e-10
    record(5, ok, f"k=1 vs direct Poisson {gap:.1e}; k=n=2 residual from exact start {rep2.final_residual:.1e}")


def test_criterion_6_theta_independence(radial_path):
    c11 = radial_path["c11_series"]
    l1 = radial_path["l1_residual_series"]
    monotone = all(b < a for a, b in zip(l1, l1[1:]))
    final_rel = abs(c11[-1] - 6.0) / 6.0
    ok = radial_path["max_over_min"] <= 1.2 and final_rel <= 0.15 and monotone
    record(6, ok, f"c11 max/min {radial_path['max_over_min']:.4f}, final {c11[-1]:.4f} ({final_rel:.1%} from 6), "
                  f"L1 residual {'decreasing' if monotone else 'NOT decreasing'} {l1[0]:.2e} -> {l1[-1]:.2e}")


def test_criterion_7_comparison(radial_path):
    entries = radial_path["path_object"].entries
    worst_margin = np.inf
    for a, b in zip(entries, entries[1:]):
        slack = 2 * max(a.report.tol_newton, b.report.tol_newton) + 1e-4
        cmp = comparison_check(a.field, b.field, slack)
        worst_margin = min(worst_margin, slack - cmp.max_violation)
    record(7, worst_margin >= 0, f"{len(entries) - 1} consecutive pairs, smallest unused slack {worst_margin:.2e}")


def test_criterion_8_geometry():
    m2 = is_k1_convex(BALL, 2).margin
    m3 = is_k1_convex(BALL, 3).margin
    dumb = is_k1_convex(DUMBBELL, 2)
    ok = abs(m2 - comb(2, 1)) <= 1e-8 and abs(m3 - comb(2, 2)) <= 1e-8 and not dumb.passed and dumb.margin < 0
    record(8, ok, f"ball margins {m2:.10f} (k=2), {m3:.10f} (k=3); dumbbell margin {dumb.margin:.3f}")


def test_criterion_9_hygiene(radial33, radial65, radial_path):
    for e in radial_path["path_object"].entries:
        HYGIENE.solution(e.field, e.report)
    ok = not (HYGIENE.inadmissible or HYGIENE.non_decreasing or HYGIENE.bound_failures)
    record(9, ok, f"{HYGIENE.iterates} iterates, {HYGIENE.solutions} solutions: {len(HYGIENE.inadmissible)} "
                  f"inadmissible, {len(HYGIENE.non_decreasing)} non-decreasing steps, "
                  f"{len(HYGIENE.bound_failures)} two-sided bound failures")
