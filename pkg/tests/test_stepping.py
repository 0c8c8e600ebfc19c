import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.polynomial import chebyshev as npcheb

from ultraspectral.banded import FactorCache
from ultraspectral.exceptions import BoundaryCorrectionError, InvalidStateError
from ultraspectral.operators import BoundaryFunctional, OperatorSpec, assemble_L, conversion_matrix
from ultraspectral.presets import fisher_problem, periodic_transport_problem, transport_problem
from ultraspectral.schemes import LmmScheme, RkScheme, get_scheme
from ultraspectral.series import (cheb_points, chebyshev, evaluate, fit_length, fourier, resolve,
                                  vals_to_coeffs)
from ultraspectral.stepping import (ProblemSpec, Stepper, StepState, bc_correct, eval_nonlinear,
                                    run, solve_bvp, step_a1_lmm, step_a1_rk, step_a2_lmm,
                                    step_a2_rk)

DIRICHLET = BoundaryFunctional.of("dirichlet_left", "dirichlet_right")


def heat(nu=1.0, nonlinear=None, initial=None):
    return ProblemSpec(OperatorSpec.from_coefficients([0, 0, nu]), DIRICHLET,
                       initial or (lambda x: np.sin(2 * np.pi * x)), nonlinear=nonlinear)


def dense_pieces(problem, n):
    S = conversion_matrix(problem.order, n, rows=n).toarray()
    L = assemble_L(problem.linear, n, rows=n).toarray()
    return S, L, problem.boundary.matrix(n)


class TestSchemes:
    def test_tables(self):
        for name in ("euler", "backward-euler", "ab2", "ab3", "ab4", "bdf2", "bdf3", "bdf4", "am2"):
            s = get_scheme(name)
            assert s.alpha[-1] == 1 and abs(sum(s.alpha)) < 1e-15
            assert s.explicit == (s.beta[-1] == 0)
        for name in ("rk1", "rk3", "rk4"):
            s = get_scheme(name)
            assert s.theta[0] == s.mu[0] == 0 and sum(s.gamma) == pytest.approx(1)

    def test_lmm_order_conditions(self):
        # sum alpha_j j^q = q sum beta_j j^(q-1) for q <= order
        for name in ("ab2", "ab3", "ab4", "bdf2", "bdf3", "bdf4", "am2"):
            s = get_scheme(name)
            j = np.arange(s.r + 1, dtype=float)
            a, b = np.array(s.alpha), np.array(s.beta)
            for q in range(1, s.order + 1):
                assert np.dot(a, j ** q) == pytest.approx(q * np.dot(b, j ** (q - 1)), abs=1e-13)

    def test_rk_scalar_order(self):
        # chained stages applied to u' = u reproduce exp(h) to the nominal order
        for name in ("rk3", "rk4"):
            s = get_scheme(name)
            errs = []
            for h in (0.1, 0.05):
                y, acc = None, 0.0
                for j in range(s.s):
                    y = h * (1.0 + (s.mu[j] * y if j else 0.0))
                    acc += s.gamma[j] * y
                errs.append(abs(1 + acc - np.exp(h)))
            assert np.log2(errs[0] / errs[1]) == pytest.approx(s.order + 1, abs=0.2)

    def test_invalid(self):
        with pytest.raises(ValueError):
            LmmScheme("bad", (0.0, 2.0), (1.0, 0.0), 1)
        with pytest.raises(ValueError):
            RkScheme("bad", (0.0,), (0.0,), (0.5,), 1)
        with pytest.raises(ValueError):
            get_scheme("nope")


class TestBcCorrect:
    def test_already_satisfied(self):
        u = np.r_[np.random.default_rng(0).standard_normal(6), 0, 0]
        u = bc_correct(u, DIRICHLET)
        assert np.allclose(bc_correct(u, DIRICHLET), u, atol=1e-15, rtol=0)

    def test_dirichlet_pair_vs_dense(self):
        u = np.random.default_rng(1).standard_normal(8)
        B = DIRICHLET.matrix(8)
        out = bc_correct(u, DIRICHLET)
        assert np.array_equal(out[:6], u[:6])
        ref = np.linalg.solve(B[:, 6:], -B[:, :6] @ u[:6])
        assert np.allclose(out[6:], ref, atol=1e-14)
        assert np.abs(B @ out).max() < 1e-14

    @given(arrays(float, st.integers(4, 60), elements=st.floats(-1e3, 1e3)),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_rows_satisfied(self, u, a, b):
        bc = BoundaryFunctional.of(("dirichlet_left", a), ("dirichlet_right", b))
        out = bc_correct(u, bc)
        assert np.abs(bc.matrix(u.size) @ out - [a, b]).max() <= 1e-12 * max(1, np.abs(out).max())

    def test_singular(self):
        bc = BoundaryFunctional.of("dirichlet_right", "dirichlet_right")
        with pytest.raises(BoundaryCorrectionError):
            bc_correct(np.ones(6), bc)


class TestLinearSteps:
    def test_zero_stays_zero(self):
        p = heat(initial=chebyshev(np.zeros(4)))
        for approach in (1, 2):
            for name in ("ab2", "bdf2", "rk3"):
                st_ = Stepper(p, get_scheme(name), 1e-3, approach)
                s = st_.initial_state(24)
                run(st_, s, 10)
                assert not np.any(s.u)

    def test_backward_euler_vs_dense(self):
        n, h = 32, 1e-3
        p = heat()
        S, L, B = dense_pieces(p, n)
        state = StepState(0.0, p.initial_coeffs(n))
        got = step_a1_lmm(p, get_scheme("backward-euler"), state, h)
        M = np.vstack([B, (S - h * L)[: n - 2]])
        ref = np.linalg.solve(M, np.r_[0, 0, (S @ state.u)[: n - 2]])
        assert np.abs(got - ref).max() < 1e-12

    def test_forward_euler_a2_vs_dense(self):
        n, h = 16, 1e-3
        p = transport_problem()
        S, L, B = dense_pieces(p, n)
        u0 = p.initial_coeffs(n)
        got = step_a2_lmm(p, get_scheme("euler"), StepState(0.0, u0), h)
        v = u0 + h * np.linalg.solve(S, L @ u0)
        v[-1] = -B[0, :-1] @ v[:-1] / B[0, -1]
        assert np.abs(got - v).max() < 1e-13

    def test_rk_stage_rhs_and_constant(self):
        # u_t = u_x keeps the constant state that matches u(1) = 1
        p = ProblemSpec(OperatorSpec.from_coefficients([0, 1]),
                        BoundaryFunctional.of(("dirichlet_right", 1.0)), chebyshev([1.0]))
        for fn in (step_a1_rk, step_a2_rk):
            out = fn(p, get_scheme("rk1"), StepState(0.0, p.initial_coeffs(10)), 0.01)
            assert np.allclose(out, np.eye(10)[0], atol=1e-15)

    def test_rk3_a2_vs_dense(self):
        n, h = 20, 1e-4
        p = heat()
        S, L, B = dense_pieces(p, n)
        u = p.initial_coeffs(n)
        K = np.linalg.solve(S, L)
        sch = get_scheme("rk3")
        y, acc = None, 0
        for j in range(sch.s):
            y = h * K @ (u + (sch.mu[j] * y if j else 0))
            acc = acc + sch.gamma[j] * y
        ref = bc_correct(u + acc, B)
        got = step_a2_rk(p, sch, StepState(0.0, u), h)
        assert np.abs(got - ref).max() < 1e-12

    @pytest.mark.parametrize("approach", [1, 2])
    @pytest.mark.parametrize("name", ["ab2", "bdf2", "rk3", "am2"])
    def test_boundary_preserved(self, approach, name):
        p = heat()
        st_ = Stepper(p, get_scheme(name), 1e-5, approach)
        s = st_.initial_state(40)
        B = p.boundary.matrix(40)
        for _ in range(20):
            u = st_.step(s)
            assert np.abs(B @ u).max() <= 1e-12 * max(1, np.abs(u).max())

    def test_approaches_agree(self):
        n = 64
        p = heat()
        h = 1 / n ** 4
        states = []
        for approach in (1, 2):
            st_ = Stepper(p, get_scheme("rk3"), h, approach)
            s = st_.initial_state(n)
            run(st_, s, 500)
            states.append(s.u)
        assert np.abs(states[0] - states[1]).max() < 1e-13

    def test_heat_rk3_accuracy(self):
        n, h, T = 32, 2e-5, 0.01
        p = heat()
        st_ = Stepper(p, get_scheme("rk3"), h, 1)
        s = st_.initial_state(n)
        run(st_, s, round(T / h))
        x = np.linspace(-1, 1, 9)
        exact = np.exp(-4 * np.pi ** 2 * s.t) * np.sin(2 * np.pi * x)
        assert np.abs(evaluate(chebyshev(s.u), x) - exact).max() < 1e-10

    def test_startup_keeps_time(self):
        p = heat()
        for name in ("ab4", "bdf3"):
            st_ = Stepper(p, get_scheme(name), 1e-4, 1)
            s = st_.initial_state(32)
            run(st_, s, 7)
            assert s.t == pytest.approx(7e-4)
            assert len(s.history) == st_.r

    def test_periodic_transport(self):
        p = periodic_transport_problem()
        st_ = Stepper(p, get_scheme("rk4"), 1e-3, 1)
        s = st_.initial_state(65)
        run(st_, s, 500)
        x = np.linspace(-1, 1, 11)
        got = evaluate(fourier(s.u), x).real
        assert np.abs(got - np.exp(np.sin(np.pi * (x + 0.5)))).max() < 1e-9

    def test_history_length_mismatch(self):
        p = heat()
        st_ = Stepper(p, get_scheme("ab2"), 1e-4)
        s = StepState(0.0, np.zeros(20), 2)
        s.push(1e-4, np.zeros(24))
        with pytest.raises(InvalidStateError):
            st_.step(s)
        with pytest.raises(InvalidStateError):
            st_.compute(StepState(0.0, np.zeros(20), 2))

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            Stepper(heat(), get_scheme("ab2"), 0.0)
        with pytest.raises(ValueError):
            Stepper(heat(), get_scheme("ab2"), 1e-3, approach=3)
        with pytest.raises(ValueError):
            ProblemSpec(OperatorSpec.from_coefficients([0, 0, 1]), BoundaryFunctional.of("dirichlet_left"))

    def test_cache_reuse(self):
        cache = FactorCache()
        st_ = Stepper(heat(), get_scheme("bdf2"), 1e-4, 1, cache)
        s = st_.initial_state(32)
        run(st_, s, 30)
        assert cache.factorizations == 1


class TestNonlinear:
    def test_zero(self):
        out = eval_nonlinear(lambda t, x, u: 0 * u, 0.0, np.array([1.0, 2.0]), 2, rows=5)
        assert not np.any(out.coeffs)
        assert not np.any(eval_nonlinear(None, 0.0, np.ones(5), 2).coeffs)

    def test_square_of_x(self):
        out = eval_nonlinear(lambda t, x, u: u * u, 0.0, np.array([0.0, 1.0]), 0, rows=3)
        assert np.allclose(out.coeffs, [0.5, 0, 0.5], atol=1e-15)

    def test_fisher_pointwise(self):
        n = 64
        front = lambda x: 0.25 * (1 - np.tanh(40 * x / np.sqrt(6)))
        u = resolve(front).coeffs
        g = eval_nonlinear(lambda t, x, v: v - v * v, 0.0, u, 0, rows=max(u.size, n)).coeffs
        x = cheb_points(4 * n)
        ux = npcheb.chebval(x, u)
        assert np.abs(npcheb.chebval(x, g) - (ux - ux ** 2)).max() < 1e-12

    def test_zero_nonlinearity_is_bitwise_linear(self):
        for name in ("ab2", "rk3"):
            outs = []
            for nl in (None, lambda t, x, u: 0 * u):
                st_ = Stepper(heat(nonlinear=nl), get_scheme(name), 1e-5, 1)
                s = st_.initial_state(32)
                run(st_, s, 5)
                outs.append(s.u)
            assert np.array_equal(*outs)

    def test_implicit_euler_vs_fixed_point(self):
        n, h = 32, 1e-3
        p = heat(nonlinear=lambda t, x, u: u - u * u)
        S, L, B = dense_pieces(p, n)
        u0 = p.initial_coeffs(n)
        got = step_a1_lmm(p, get_scheme("backward-euler"), StepState(0.0, u0), h)
        M = np.vstack([B, (S - h * L)[: n - 2]])
        v = u0.copy()
        for _ in range(200):
            x = cheb_points(4 * n)
            vx = npcheb.chebval(x, v)
            g = fit_length(vals_to_coeffs(vx - vx ** 2).coeffs, n + 4)
            Ng = (conversion_matrix(2, n + 4, rows=n).toarray() @ g)
            w = np.linalg.solve(M, np.r_[0, 0, (S @ u0 + h * Ng)[: n - 2]])
            done = np.abs(w - v).max() < 1e-14
            v = w
            if done:
                break
        assert np.abs(got - v).max() < 1e-11

    def test_fisher_rk3_half_step(self):
        # explicit RK3 needs h below its stability limit; 1/(4 n^2) at n = 128
        p = fisher_problem()
        n, T = 128, 0.05
        res = []
        for h in (1 / (4 * n ** 2), 1 / (8 * n ** 2)):
            st_ = Stepper(p, get_scheme("rk3"), h, 1)
            s = st_.initial_state(n)
            run(st_, s, round(T / h))
            res.append(s.u)
        assert np.abs(res[0] - res[1]).max() < 1e-8


class TestBvp:
    def test_linear(self):
        bc = BoundaryFunctional.of(("dirichlet_left", -1.0), ("dirichlet_right", 1.0))
        u = solve_bvp(OperatorSpec.from_coefficients([0, 0, 1]), bc, [0.0], 8)
        assert np.allclose(u.coeffs, np.eye(8)[1], atol=1e-14)

    def test_sine(self):
        u = solve_bvp(OperatorSpec.from_coefficients([0, 0, 1]), DIRICHLET,
                      lambda x: -np.pi ** 2 * np.sin(np.pi * x), 32)
        x = np.linspace(-1, 1, 41)
        assert np.abs(evaluate(u, x) - np.sin(np.pi * x)).max() < 1e-12

    def test_antiderivative(self):
        u = solve_bvp(OperatorSpec.from_coefficients([0, 1]), BoundaryFunctional.of("dirichlet_right"),
                      chebyshev([0, 0, 1.0]), 8)
        # integral of 2x^2 - 1 from 1 to x
        x = np.linspace(-1, 1, 7)
        assert np.allclose(evaluate(u, x), 2 * x ** 3 / 3 - x - (2 / 3 - 1), atol=1e-14)

    @settings(max_examples=20)
    @given(st.floats(0.5, 3.0), st.floats(-2, 2))
    def test_helmholtz_like(self, k, a):
        # u'' - k^2 u = 0 with u(-1) = a, u(1) = 0
        bc = BoundaryFunctional.of(("dirichlet_left", a), ("dirichlet_right", 0.0))
        u = solve_bvp(OperatorSpec.from_coefficients([-k * k, 0, 1]), bc, [0.0], 40)
        x = np.linspace(-1, 1, 9)
        exact = a * np.sinh(k * (1 - x)) / np.sinh(2 * k)
        assert np.abs(evaluate(u, x) - exact).max() < 1e-12
