import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from marked_cpp.kernels import AtomicDensity, nu_init
from marked_cpp.levy import brownian_model, stable_model
from marked_cpp.limit import (
    AtomicSampler,
    assemble_sigma,
    brownian_limit_lineage,
    brownian_transition,
    p_eps,
    pi1_B,
    pi1_B_geq,
    sample_H_K,
    sample_chain_M_eps,
    sample_limit_cpp,
    sample_mu_K_jump,
)


class TestPEps:
    def test_brownian_value(self):
        assert p_eps(brownian_model(), 0.1, 1.0) == pytest.approx(4.5)

    def test_decreasing_in_eps(self):
        m = stable_model(1.5)
        vals = [p_eps(m, e, 1.0) for e in (0.05, 0.1, 0.3, 0.6)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_stable_closed_form(self):
        from scipy.special import gamma
        e = 0.2
        expect = gamma(1.5) * (e ** -0.5 - 1.0)
        assert p_eps(stable_model(1.5), e, 1.0) == pytest.approx(
            expect, abs=1e-10)


class TestAssembleSigma:
    def test_linear_ladder(self):
        lin = assemble_sigma(lambda t: t / 2, [0.4, 1.0], 1.2)
        assert lin.coalescence_depth == pytest.approx(0.6)
        assert lin.mutation_depths == (pytest.approx(0.2),
                                       pytest.approx(0.5))
        assert not lin.coalescence_is_mutation

    def test_no_mutations(self):
        lin = assemble_sigma(lambda t: t / 2, [], 1.0)
        assert lin.mutation_count == 0

    def test_mutation_at_lifetime_sets_flag(self):
        lin = assemble_sigma(lambda t: t / 2, [0.4, 1.0], 1.0)
        assert lin.coalescence_is_mutation
        assert lin.mutation_depths[-1] == lin.coalescence_depth

    def test_later_mutations_dropped(self):
        lin = assemble_sigma(lambda t: t / 2, [0.4, 2.0], 1.0)
        assert lin.mutation_depths == (pytest.approx(0.2),)

    def test_decreasing_path_rejected(self):
        with pytest.raises(ValueError):
            assemble_sigma(lambda t: 1.0 - t / 2, [0.2], 1.0)


class TestAtomicSampler:
    def test_pure_atom(self):
        nu = nu_init(brownian_model(), 0.1, 1.0)
        s = AtomicSampler(nu)
        rng = np.random.default_rng(0)
        assert all(s.sample(rng) == (0.1, 0) for _ in range(20))

    def test_triangle_density(self):
        # density 2u on (0,1): CDF u^2
        tri = AtomicDensity([], lambda u, q: 2.0 * u, (0.0, 1.0))
        s = AtomicSampler(tri)
        rng = np.random.default_rng(1)
        draws = [s.sample(rng)[0] for _ in range(4000)]
        assert stats.kstest(draws, lambda u: np.asarray(u) ** 2).pvalue > 0.01

    def test_mixed_mass_split(self):
        mix = AtomicDensity([(2.0, 0, 1.0)], lambda u, q: 1.0, (0.0, 1.0))
        s = AtomicSampler(mix)
        rng = np.random.default_rng(2)
        atom_frac = np.mean([s.sample(rng)[0] == 2.0 for _ in range(4000)])
        assert abs(atom_frac - 0.5) < 3 * math.sqrt(0.25 / 4000)


class TestSampleHK:
    def test_brownian_kill_depth_cdf(self):
        # hazard 1/h in depth from 0.1: P(kill <= 0.2 | killed < 1) = 5/9
        m = brownian_model()
        rng = np.random.default_rng(3)
        depths = []
        for _ in range(4000):
            path = sample_H_K(m, 1.0, 0.1, rng)
            if path.killed:
                depths.append(path.kill_depth)
        frac = np.mean(np.asarray(depths) <= 0.2)
        expect = (1 / 0.1 - 1 / 0.2) / (1 / 0.1 - 1.0)
        se = math.sqrt(expect * (1 - expect) / len(depths))
        assert expect == pytest.approx(0.55556, abs=1e-4)
        assert abs(frac - expect) < 3 * se

    def test_brownian_survival_probability(self):
        # unkilled (reaches tau) with probability x0/tau = 0.1
        m = brownian_model()
        rng = np.random.default_rng(4)
        unkilled = np.mean([not sample_H_K(m, 1.0, 0.1, rng).killed
                            for _ in range(4000)])
        assert abs(unkilled - 0.1) < 3 * math.sqrt(0.09 / 4000)

    def test_brownian_no_jumps(self):
        path = sample_H_K(brownian_model(), 1.0, 0.3,
                          np.random.default_rng(5))
        assert path.jump_sizes.size == 0
        assert path.drift == 0.5

    def test_stable_terminates_with_bounded_jumps(self):
        m = stable_model(1.5)
        rng = np.random.default_rng(6)
        for _ in range(30):
            path = sample_H_K(m, 1.0, 0.3, rng)
            assert path.killed
            assert path.kill_depth < 1.0
            depth = 0.3
            for u in path.jump_sizes:
                assert u < 1.0 - depth
                depth += u

    def test_depth_at(self):
        m = brownian_model()
        rng = np.random.default_rng(7)
        path = sample_H_K(m, 1.0, 0.2, rng)
        if path.killed:
            t = 0.5 * path.kill_time
            assert path.depth_at(t) == pytest.approx(0.2 + 0.5 * t)
            with pytest.raises(ValueError):
                path.depth_at(path.kill_time)


class TestMuKJumpSampler:
    def test_histogram_matches_density(self):
        m = stable_model(1.5)
        rng = np.random.default_rng(8)
        draws = np.array([sample_mu_K_jump(m, 1.0, 0.5, rng)
                          for _ in range(4000)])
        assert np.all(draws < 0.5)
        # normalized closed-form mass of (0.15, 0.25)
        alpha, tau, a = 1.5, 1.0, 0.5
        nrm = 1.0 / abs(math.gamma(-alpha))

        def dens(u):
            return (nrm * a * u ** -alpha / (alpha * (a + u))
                    * ((tau - a - u) / tau) ** (alpha - 1))

        floor = 1e-3
        total = quad(dens, floor, tau - a)[0]
        expect = quad(dens, 0.15, 0.25)[0] / total
        frac = np.mean((draws > 0.15) & (draws < 0.25))
        se = math.sqrt(expect * (1 - expect) / len(draws))
        assert abs(frac - expect) < 3 * se


class TestBrownianTransition:
    def test_absorbing(self):
        rng = np.random.default_rng(9)
        assert brownian_transition((0.3, 0), 1.0, 1.0, rng) == (0.3, 0)

    def test_monotone_depths(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            d, q = brownian_transition((0.3, 1), 1.0, 1.0, rng)
            assert 0.3 < d < 1.0

    def test_death_law_without_marks(self):
        rng = np.random.default_rng(11)
        deaths = [brownian_transition((0.2, 1), 1.0, 0.0, rng)[0]
                  for _ in range(4000)]

        def cdf(h):
            h = np.asarray(h)
            return (1 / 0.2 - 1 / h) / (1 / 0.2 - 1.0)

        assert stats.kstest(deaths, cdf).pvalue > 0.01


class TestChainMEps:
    def test_no_marks_single_state(self):
        m = brownian_model()
        rng = np.random.default_rng(12)
        chain = sample_chain_M_eps(m, 0.1, 1.0, rng, theta=0.0)
        assert len(chain.states) == 1
        assert chain.states[0][1] == 0
        assert chain.mutation_count == 0

    def test_absorption_depth_law(self):
        # coalescence depth density 1/(2h^2)/p_eps on (eps, tau)
        m = brownian_model()
        rng = np.random.default_rng(13)
        depths = [sample_chain_M_eps(m, 0.1, 1.0, rng).absorption_depth
                  for _ in range(3000)]

        def cdf(h):
            h = np.asarray(h)
            return (1 / (2 * 0.1) - 1 / (2 * h)) / 4.5

        assert stats.kstest(depths, cdf).pvalue > 0.01

    def test_depths_increase(self):
        m = brownian_model()
        rng = np.random.default_rng(14)
        for _ in range(200):
            chain = sample_chain_M_eps(m, 0.1, 1.0, rng, theta=0.5)
            d = [x for x, _ in chain.states]
            assert all(b > a for a, b in zip(d, d[1:]))

    def test_mutation_count_law(self):
        # K counts marks at depth >= eps: Poisson(beta(h-eps)) mixed over
        # the depth law
        m = brownian_model()
        eps, tau, theta = 0.1, 1.0, 0.5
        beta = 2 * theta
        rng = np.random.default_rng(15)
        runs = 4000
        counts = np.array([sample_chain_M_eps(m, eps, tau, rng,
                                              theta=theta).mutation_count
                           for _ in range(runs)])
        p = p_eps(m, eps, tau)
        for k in (0, 1):
            expect = quad(
                lambda h: (1 / (2 * h * h) / p) * math.exp(-beta * (h - eps))
                * (beta * (h - eps)) ** k / math.factorial(k),
                eps, tau)[0]
            frac = np.mean(counts == k)
            se = math.sqrt(expect * (1 - expect) / runs)
            assert abs(frac - expect) < 3 * se

    def test_chain_matches_H_K_kill_law(self):
        m = brownian_model()
        rng = np.random.default_rng(16)
        chain_depths = [sample_chain_M_eps(m, 0.1, 1.0, rng).absorption_depth
                        for _ in range(2000)]
        hk_depths = []
        while len(hk_depths) < 2000:
            path = sample_H_K(m, 1.0, 0.1, rng)
            if path.killed:
                hk_depths.append(path.kill_depth)
        assert stats.ks_2samp(chain_depths, hk_depths).pvalue > 0.01

    def test_prelimit_chain(self):
        from marked_cpp.levy import (ConstantMutation, RescalingScheme,
                                     critical_exponential_base, rescale)
        base = critical_exponential_base(mutation=ConstantMutation(0.2))
        model = rescale(base, RescalingScheme(n=10, d_n=50.0))
        rng = np.random.default_rng(17)
        chain = sample_chain_M_eps(model, 0.3, 1.0, rng)
        assert chain.states[-1][1] == 0
        assert chain.states[0][0] >= 0.3


class TestPi1B:
    def test_theta_zero(self):
        m = brownian_model()
        assert pi1_B(m, 0, 0.1, 1.0) == (pytest.approx(4.5), 0.0)
        assert pi1_B(m, 3, 0.1, 1.0) == (0.0, 0.0)

    def test_brownian_masses_sum_to_p_eps(self):
        m = brownian_model()
        total = sum(pi1_B(m, k, 0.1, 1.0, theta=0.5)[0] for k in range(40))
        assert total == pytest.approx(4.5, abs=1e-6)

    def test_brownian_m0_integral(self):
        m = brownian_model()
        val, err = pi1_B(m, 0, 0.1, 1.0, theta=0.5)
        expect = quad(lambda h: math.exp(-h) / (2 * h * h), 0.1, 1.0)[0]
        assert err == 0.0
        assert val == pytest.approx(expect, rel=1e-9)

    def test_divergence_rates(self):
        # at-least-one-mutation intensity grows like (beta/2) ln(1/eps)
        m = brownian_model()
        theta = 0.5
        ratios = [pi1_B_geq(m, 1, e, 1.0, theta) / math.log(1 / e)
                  for e in (1e-2, 1e-3, 1e-4)]
        assert abs(ratios[2] - ratios[1]) / ratios[2] < 0.05
        two = [pi1_B_geq(m, 2, e, 1.0, theta) for e in (1e-2, 1e-3, 1e-4)]
        assert abs(two[2] - two[1]) < abs(two[1] - two[0])

    def test_monte_carlo_branch(self):
        m = stable_model(1.5)
        rng = np.random.default_rng(18)
        val, err = pi1_B(m, 0, 0.3, 1.0, theta=0.4, samples=150, rng=rng)
        assert 0.0 < val <= p_eps(m, 0.3, 1.0)
        assert err > 0.0


class TestLimitCPP:
    def test_mean_count(self):
        m = brownian_model()
        rng = np.random.default_rng(19)
        counts = [len(sample_limit_cpp(m, 1.0, 0.1, rng).atoms)
                  for _ in range(2000)]
        se = np.std(counts, ddof=1) / math.sqrt(len(counts))
        assert abs(np.mean(counts) - 4.5) < 3 * se

    def test_no_theta_no_mutations(self):
        m = brownian_model()
        rng = np.random.default_rng(20)
        cpp = sample_limit_cpp(m, 1.0, 0.1, rng, theta=0.0)
        assert all(lin.mutation_count == 0 for _, lin in cpp.atoms)

    def test_positions_uniform(self):
        m = brownian_model()
        rng = np.random.default_rng(21)
        pos = []
        while len(pos) < 3000:
            pos.extend(sample_limit_cpp(m, 1.0, 0.1, rng).positions())
        assert stats.kstest(pos, "uniform").pvalue > 0.01

    def test_depth_floor(self):
        m = brownian_model()
        rng = np.random.default_rng(22)
        for _ in range(50):
            cpp = sample_limit_cpp(m, 1.0, 0.2, rng, theta=0.5)
            assert all(lin.coalescence_depth >= 0.2 for _, lin in cpp.atoms)

    def test_brownian_lineage_poisson_mean(self):
        rng = np.random.default_rng(23)
        pairs = [brownian_limit_lineage(0.1, 1.0, 2.0, rng)
                 for _ in range(4000)]
        counts = np.array([l.mutation_count for l in pairs])
        depths = np.array([l.coalescence_depth for l in pairs])
        resid = counts - 2.0 * depths
        se = resid.std(ddof=1) / math.sqrt(len(resid))
        assert abs(resid.mean()) < 3 * se
