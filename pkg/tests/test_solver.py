import numpy as np
import pytest

from evounroll.benchmarks import ObjectiveFunction
from evounroll.errors import ConfigError, ContractError, NumericError
from evounroll.operator import init_block_params
from evounroll.solver import (GateMask, InnerConfig, Population, composite_update,
                               evals_per_step, km_step, numerical_operator,
                               proxy_grad_direction, schedule_step_size, soft_gate,
                               uniform_population, unroll)
from evounroll.tensor import ParamStore, Tensor

from .oracles import projected_gd_trajectory


def sphere(dim=2, shift=None, bounds=(-5.0, 5.0), seed=0):
    if shift is None:
        shift = np.zeros(dim)
    return ObjectiveFunction("Sphere", dim, shift=np.asarray(shift, float),
                             bounds=bounds, seed=seed)


def make_block(dim, d_model=8, heads=2, seed=0, zero=False):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    block = init_block_params(store, "block0", dim, d_model, heads, "ssm", rng)
    if zero:
        for path in store.paths():
            if not path.endswith("ln.gain"):
                store[path].data = np.zeros_like(store[path].data)
    return store, block


def make_pop(f, batch=1, pop=6, seed=0):
    rng = np.random.default_rng(seed)
    return uniform_population(f, batch, pop, rng)


class TestNumericalOperator:
    def test_identity_on_interior(self):
        f = sphere()
        pop = make_pop(f)
        out = numerical_operator(pop, InnerConfig(smoothing_sigma=0.0))
        assert np.array_equal(out.x.data, pop.x.data)

    def test_clamps_exterior_point(self):
        f = sphere()
        x = np.array([[[7.3, 0.0]]])
        pop = Population(Tensor(x), f.evaluate(x), f.bounds)
        out = numerical_operator(pop, InnerConfig())
        assert out.x.data[0, 0, 0] == 5.0

    def test_sampled_non_expansiveness(self):
        cfg = InnerConfig(smoothing_sigma=0.4)
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            u = rng.uniform(-6, 6, (1, 4, 3))
            v = rng.uniform(-6, 6, (1, 4, 3))
            pu = Population(Tensor(u), np.zeros((1, 4)), (-5.0, 5.0))
            pv = Population(Tensor(v), np.zeros((1, 4)), (-5.0, 5.0))
            num = np.linalg.norm(numerical_operator(pu, cfg).x.data
                                 - numerical_operator(pv, cfg).x.data)
            den = np.linalg.norm(u - v)
            worst = max(worst, num / den)
        assert worst <= 1.0 + 1e-12


class TestKmStep:
    def test_zero_proposal_keeps_interior_x(self):
        f = sphere()
        _, block = make_block(2, zero=True)
        pop = make_pop(f)
        for alpha in (0.25, 0.5, 1.0):
            out, _ = km_step(pop, f, InnerConfig(alpha=alpha), block)
            assert np.allclose(out.x.data, pop.x.data, atol=1e-14)

    def test_alpha_one_returns_operator_output(self):
        f = sphere()
        pop = make_pop(f)
        c = np.array([1.0, -2.0])

        def const_op(x):
            return np.broadcast_to(c, x.shape).copy()

        out, _ = km_step(pop, f, InnerConfig(alpha=1.0), None, synthetic_op=const_op)
        assert np.allclose(out.x.data, np.broadcast_to(c, pop.x.data.shape))

    def test_half_alpha_affine_arithmetic(self):
        f = sphere()
        pop = make_pop(f)
        c = np.array([2.0, 2.0])

        def const_op(x):
            return np.broadcast_to(c, x.shape).copy()

        out, _ = km_step(pop, f, InnerConfig(alpha=0.5), None, synthetic_op=const_op)
        assert np.allclose(out.x.data, 0.5 * pop.x.data + 0.5 * c)

    def test_result_is_reevaluated(self):
        f = sphere()
        _, block = make_block(2, seed=5)
        pop = make_pop(f)
        out, _ = km_step(pop, f, InnerConfig(), block)
        assert np.array_equal(out.fit, f.evaluate(out.x.data))


class TestProxyGradDirection:
    def test_zero_gradient_is_identity(self):
        f = sphere(shift=[0.0, 0.0])
        x = np.zeros((1, 3, 2))
        pop = Population(Tensor(x), f.evaluate(x), f.bounds)
        d_ol, g = proxy_grad_direction(pop, f, 0, InnerConfig())
        assert np.array_equal(d_ol.data, x)
        assert np.array_equal(g, np.zeros_like(x))

    def test_one_step_solves_quadratic(self):
        f = sphere(shift=[1.5, -0.5])
        pop = make_pop(f)
        cfg = InnerConfig(kappa=0.5)
        d_ol, _ = proxy_grad_direction(pop, f, 0, cfg)
        assert np.allclose(d_ol.data, np.broadcast_to(f.shift, pop.x.data.shape),
                           atol=1e-12)

    def test_schedule_properties(self):
        kappa = 0.3
        s = np.array([schedule_step_size(kappa, k) for k in range(10_000)])
        assert np.allclose(s, kappa / (np.arange(10_000) + 1.0))
        # partial sums grow like the harmonic series, squares stay summable
        assert s.sum() >= kappa * np.log(10_001)
        assert (s ** 2).sum() <= kappa ** 2 * np.pi ** 2 / 6 + 1e-12

    def test_adagrad_preconditioner(self):
        f = sphere(shift=[0.0, 0.0])
        x = np.full((1, 2, 2), 2.0)
        pop = Population(Tensor(x), f.evaluate(x), f.bounds)
        cfg = InnerConfig(kappa=0.3, preconditioner="diagonal-adagrad")
        accum = np.zeros_like(x)
        d_ol, g = proxy_grad_direction(pop, f, 0, cfg, adagrad_accum=accum)
        # first step: P = sqrt(g^2) + eps, so the move is s_0 * sign(g)
        want = x - 0.3 * g / (np.abs(g) + 1e-8)
        assert np.allclose(d_ol.data, want, atol=1e-12)

    def test_non_finite_gradient_raises_with_step(self):
        f = sphere()
        x = np.zeros((1, 2, 2))
        pop = Population(Tensor(x), f.evaluate(x), f.bounds)

        class BadObjective:
            bounds = f.bounds
            dim = 2

            def gradient(self, x, mode="analytic"):
                return np.full_like(x, np.nan)

        with pytest.raises(NumericError, match="step 3"):
            proxy_grad_direction(pop, BadObjective(), 3, InnerConfig())


class TestSoftGate:
    def test_equal_fitness_is_half(self):
        mask = soft_gate(np.array([[1.0]]), np.array([[1.0]]), tau=1.0)
        assert mask.m[0, 0, 0] == 0.5

    def test_log3_gap_is_three_quarters(self):
        tau = 0.7
        fit_ol = np.array([[0.0]])
        fit_il = np.array([[tau * np.log(3.0)]])
        mask = soft_gate(fit_ol, fit_il, tau)
        assert abs(mask.m[0, 0, 0] - 0.75) < 1e-12

    def test_monotone_in_gap(self):
        gaps = np.linspace(-5, 5, 41)
        masks = [soft_gate(np.array([[g]]), np.array([[0.0]]), 1.0).m[0, 0, 0]
                 for g in gaps]
        assert np.all(np.diff(masks) <= 0)

    def test_open_interval(self):
        mask = soft_gate(np.array([[1e9]]), np.array([[-1e9]]), 1e-3)
        assert 0.0 < mask.m[0, 0, 0] < 1.0


class TestCompositeUpdate:
    def setup_method(self):
        self.f = sphere()
        self.pop = make_pop(self.f, pop=4)
        rng = np.random.default_rng(2)
        self.d_ol = Tensor(rng.uniform(-4, 4, (1, 4, 2)))
        d_il_x = rng.uniform(-4, 4, (1, 4, 2))
        self.d_il = Population(Tensor(d_il_x), self.f.evaluate(d_il_x), self.f.bounds)

    def test_saturated_gates(self):
        ones = GateMask(np.ones((1, 4, 1)))
        out, _ = composite_update(self.pop, self.d_ol, self.d_il, ones, self.f,
                                  InnerConfig())
        assert np.array_equal(out.x.data, np.clip(self.d_ol.data, -5, 5))
        zeros = GateMask(np.zeros((1, 4, 1)))
        out, _ = composite_update(self.pop, self.d_ol, self.d_il, zeros, self.f,
                                  InnerConfig())
        assert np.array_equal(out.x.data, np.clip(self.d_il.x.data, -5, 5))

    def test_blend_of_interior_points_stays_interior(self):
        mask = GateMask(np.full((1, 4, 1), 0.3))
        out, _ = composite_update(self.pop, self.d_ol, self.d_il, mask, self.f,
                                  InnerConfig())
        assert np.all(out.x.data >= -5.0) and np.all(out.x.data <= 5.0)

    def test_fitness_reevaluated(self):
        mask = GateMask(np.full((1, 4, 1), 0.5))
        out, _ = composite_update(self.pop, self.d_ol, self.d_il, mask, self.f,
                                  InnerConfig())
        assert np.array_equal(out.fit, self.f.evaluate(out.x.data))


class TestUnroll:
    def test_zero_steps_returns_initial(self):
        f = sphere()
        pop = make_pop(f)
        traj = unroll(pop, f, None, InnerConfig(k_steps=0))
        assert traj.populations == [pop]
        assert traj.steps == []

    def test_degenerate_composition_is_identity(self):
        # zero proposal, gate forced to the learned side, no smoothing:
        # every step is pure KM relaxation of the identity operator.
        f = sphere()
        _, block = make_block(2, zero=True)
        pop = make_pop(f)
        cfg = InnerConfig(k_steps=5, gate_override=0.0, smoothing_sigma=0.0)
        traj = unroll(pop, f, [block], cfg)
        assert np.allclose(traj.final.x.data, pop.x.data, atol=1e-13)

    def test_matches_projected_gd_oracle(self):
        f = sphere(dim=2, shift=[1.0, -2.0], seed=3)
        _, block = make_block(2, seed=4)
        pop = make_pop(f, pop=5, seed=9)
        cfg = InnerConfig(k_steps=8, kappa=0.3, gate_override=1.0)
        traj = unroll(pop, f, [block], cfg)
        oracle = projected_gd_trajectory(pop.x.data.copy(), f.shift, None,
                                         0.3, 8, -5.0, 5.0)
        for got, want in zip(traj.populations, oracle):
            assert np.max(np.abs(got.x.data - want)) < 1e-12

    def test_contraction_bound_through_solver(self):
        # Affine operator with NSD spectrum: iterates obey the averaged bound.
        rng = np.random.default_rng(5)
        dim = 3
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = basis @ np.diag(-rng.uniform(0, 1, dim)) @ basis.T
        c = rng.uniform(-1, 1, dim)
        f = sphere(dim=dim, shift=c, bounds=(-100.0, 100.0))

        def op(x):
            return c + (x - c) @ q.T

        direction = rng.standard_normal((1, 4, dim))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        x0 = c + direction
        pop = Population(Tensor(x0), f.evaluate(x0), f.bounds)
        cfg = InnerConfig(k_steps=10, alpha=0.5, gate_override=0.0)
        traj = unroll(pop, f, None, cfg, synthetic_op=op)
        errs = np.linalg.norm(traj.final.x.data - c, axis=-1)
        assert np.all(errs <= 0.5 ** 10 + 1e-9)

    def test_residual_norm_non_increasing_on_nonexpansive_op(self):
        rng = np.random.default_rng(6)
        dim = 3
        basis, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        rot = basis * np.sign(np.diag(r))
        c = np.zeros(dim)
        f = sphere(dim=dim, shift=c, bounds=(-100.0, 100.0))

        def op(x):
            return (x - c) @ rot.T + c

        x0 = rng.uniform(-2, 2, (1, 5, dim))
        pop = Population(Tensor(x0), f.evaluate(x0), f.bounds)
        cfg = InnerConfig(k_steps=50, alpha=0.5, gate_override=0.0)
        traj = unroll(pop, f, None, cfg, synthetic_op=op)
        residuals = [d.residual_norm for d in traj.steps]
        assert np.all(np.diff(residuals) <= 1e-12)

    def test_feasibility_after_every_step(self):
        f = sphere(dim=3, shift=[4.5, 4.5, -4.5], seed=8)
        _, block = make_block(3, seed=7)
        pop = make_pop(f, pop=6, seed=11)
        cfg = InnerConfig(k_steps=6, kappa=2.5)  # big steps try to escape
        traj = unroll(pop, f, [block], cfg)
        for p in traj.populations:
            assert np.all(p.x.data >= -5.0) and np.all(p.x.data <= 5.0)

    def test_gate_blend_reconstructs_bit_exactly(self):
        f = sphere(dim=2, seed=10)
        _, block = make_block(2, seed=12)
        pop = make_pop(f, pop=4, seed=13)
        traj = unroll(pop, f, [block], InnerConfig(k_steps=4), capture=True)
        for diag in traj.steps:
            cap = diag.capture
            blend = cap["mask"] * cap["d_ol"] + (1.0 - cap["mask"]) * cap["d_il"]
            assert blend.tobytes() == cap["blend"].tobytes()

    def test_diagnostics_fields(self):
        f = sphere(dim=2, seed=14)
        _, block = make_block(2, seed=15)
        pop = make_pop(f, pop=4, seed=16)
        traj = unroll(pop, f, [block], InnerConfig(k_steps=3))
        assert len(traj.steps) == 3
        for k, diag in enumerate(traj.steps, start=1):
            assert diag.step == k
            assert 0.0 < diag.gate_mean < 1.0
            assert abs(diag.lambda_ssm + diag.lambda_attn - 1.0) < 1e-9
            assert diag.residual_norm >= 0.0

    def test_params_length_contract(self):
        f = sphere()
        _, block = make_block(2)
        pop = make_pop(f)
        with pytest.raises(ContractError):
            unroll(pop, f, [block, block], InnerConfig(k_steps=3))

    def test_shared_params_broadcast(self):
        f = sphere()
        _, block = make_block(2, seed=17)
        pop = make_pop(f)
        traj = unroll(pop, f, [block], InnerConfig(k_steps=4))
        assert len(traj.populations) == 5

    def test_trace_replay_reproduces_positions(self):
        f = sphere(dim=2, seed=18)
        _, block = make_block(2, seed=19)
        pop = make_pop(f, pop=4, seed=20)
        cfg = InnerConfig(k_steps=5)
        live = unroll(pop, f, [block], cfg, record_trace=True)
        replay = unroll(pop, f, [block], cfg, trace=live.trace)
        assert live.final.x.data.tobytes() == replay.final.x.data.tobytes()


class TestConfigValidation:
    def test_ranges(self):
        with pytest.raises(ConfigError):
            InnerConfig(alpha=0.0)
        with pytest.raises(ConfigError):
            InnerConfig(alpha=1.5)
        with pytest.raises(ConfigError):
            InnerConfig(tau=0.0)
        with pytest.raises(ConfigError):
            InnerConfig(kappa=-1.0)
        with pytest.raises(ConfigError):
            InnerConfig(smoothing_sigma=1.0)
        with pytest.raises(ConfigError):
            InnerConfig(preconditioner="hessian")

    def test_evals_per_step(self):
        assert evals_per_step(16) == 48
        assert evals_per_step(16, batch=2) == 96
