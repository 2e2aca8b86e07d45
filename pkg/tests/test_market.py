import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sgnep import market
from sgnep.game import validate_game
from sgnep.market import (
    MarketError,
    MarketOracle,
    MarketParams,
    MarketSample,
    build_game,
    demand,
    drivers_serving,
    effective_demand,
    mean_sample,
    participation_prob,
    realized_outcomes,
    sample_uncertainty,
    sampled_cost,
    sampled_cost_gradient,
)


def tiny_params(theta=(1.0, 1.0), p_bar=10.0, cap=9.0, beta=0.9, w_low=4.0,
                w_high=8.0, C=100.0, K=1.0, noise_sigma=0.1):
    n_firms = len(theta)
    return MarketParams(
        p_bar=p_bar,
        caps=[cap],
        beta=beta,
        w_low=w_low,
        w_high=np.full((n_firms, 1), w_high),
        theta=list(theta),
        C=[C],
        K=np.full((n_firms, 1), K),
        noise_sigma=noise_sigma,
    )


def feasible_profile(params, rng):
    lo = np.maximum(0.0, params.w_low / params.beta)
    hi = params.w_high / params.beta
    return lo + rng.random((params.num_firms, params.num_areas)) * (hi - lo)


class TestMarketParams:

    def test_valid_instance(self):
        assert tiny_params().problems() == []

    def test_violations_reported(self):
        assert any("p_bar" in p for p in tiny_params(cap=11.0).problems())
        assert any("w_low" in p for p in tiny_params(w_low=-1.0).problems())
        assert any("w_high" in p for p in tiny_params(w_high=3.0).problems())
        assert any("beta" in p for p in tiny_params(beta=0.0).problems())
        assert any("theta" in p for p in tiny_params(theta=(1.5, 0.5)).problems())
        assert any("noise_sigma" in p for p in tiny_params(noise_sigma=1.0).problems())
        assert any("C" in p or "K" in p for p in tiny_params(C=0.0).problems())

    def test_with_uniform_theta(self):
        params = tiny_params(theta=(0.2, 0.9)).with_uniform_theta(0.5)
        assert_allclose(params.theta, [0.5, 0.5])

    def test_table2_deterministic_and_in_range(self):
        p1 = MarketParams.table2(seed=3)
        p2 = MarketParams.table2(seed=3)
        assert_array_equal(p1.caps, p2.caps)
        assert_array_equal(p1.K, p2.K)
        assert p1.num_firms == 5
        assert p1.num_areas == 10
        assert p1.p_bar == 35.0
        assert p1.beta == 0.9
        assert p1.w_low == 12.0
        assert np.all((p1.caps > 0.65 * 35.0) & (p1.caps < 0.95 * 35.0))
        assert np.all((p1.theta >= 0.6) & (p1.theta <= 1.0))
        assert np.all((p1.w_high > 20.0) & (p1.w_high < 30.0))
        assert p1.problems() == []

    def test_table2_seeds_differ(self):
        assert not np.array_equal(MarketParams.table2(seed=0).K,
                                  MarketParams.table2(seed=1).K)


class TestDemand:

    def test_symmetric_duopoly_hand_case(self):
        # two firms sharing one area: c = C / sum K = 50 riders per driver
        params = tiny_params(theta=(1.0, 1.0), C=100.0, K=1.0)
        prices = np.array([[5.0], [5.0]])
        d = demand(0, 0, prices, c_h=50.0, params=params)
        assert_allclose(d, 50.0)

    def test_zero_prices_theta_independent(self):
        prices = np.zeros((2, 1))
        for theta in (0.0, 0.3, 1.0):
            params = tiny_params(theta=(theta, theta))
            assert_allclose(demand(0, 0, prices, c_h=50.0, params=params), 50.0)

    def test_ceiling_price_without_substitution(self):
        params = tiny_params(theta=(0.0, 0.0))
        prices = np.array([[params.p_bar], [3.0]])
        assert_allclose(demand(0, 0, prices, c_h=50.0, params=params), 0.0)

    def test_zero_price_total_demand(self):
        params = MarketParams.table2(seed=2)
        sample = mean_sample(params)
        prices = np.zeros((params.num_firms, params.num_areas))
        for h in range(params.num_areas):
            total = sum(demand(i, h, prices, sample.c[h], params)
                        for i in range(params.num_firms))
            assert_allclose(total, sample.c[h] * params.K[:, h].sum(),
                            rtol=0, atol=1e-10)

    def test_own_price_slope_constant(self):
        params = MarketParams.table2(seed=1)
        sample = mean_sample(params)
        rng = np.random.default_rng(5)
        prices = feasible_profile(params, rng)
        i, h = 2, 4
        slope = -sample.c[h] * params.K[i, h] / params.p_bar
        for delta in (0.5, 1.0, 3.0):
            bumped = prices.copy()
            bumped[i, h] += delta
            diff = (demand(i, h, bumped, sample.c[h], params)
                    - demand(i, h, prices, sample.c[h], params))
            assert_allclose(diff, slope * delta, rtol=1e-10)

    def test_cross_price_increases_demand(self):
        params = MarketParams.table2(seed=1)
        sample = mean_sample(params)
        rng = np.random.default_rng(6)
        prices = feasible_profile(params, rng)
        base = demand(0, 3, prices, sample.c[3], params)
        bumped = prices.copy()
        bumped[1, 3] += 2.0
        assert demand(0, 3, bumped, sample.c[3], params) > base

    def test_single_firm_theta_zero_allowed(self):
        params = MarketParams(p_bar=10.0, caps=[9.0], beta=0.9, w_low=4.0,
                              w_high=[[8.0]], theta=[0.0], C=[100.0], K=[[1.0]],
                              noise_sigma=0.0)
        assert_allclose(demand(0, 0, np.array([[5.0]]), 100.0, params), 50.0)

    def test_single_firm_positive_theta_rejected(self):
        params = MarketParams(p_bar=10.0, caps=[9.0], beta=0.9, w_low=4.0,
                              w_high=[[8.0]], theta=[0.5], C=[100.0], K=[[1.0]],
                              noise_sigma=0.0)
        with pytest.raises(MarketError):
            demand(0, 0, np.array([[5.0]]), 100.0, params)


class TestParticipation:

    def params(self):
        return MarketParams(p_bar=35.0, caps=[30.0], beta=0.9, w_low=12.0,
                            w_high=[[20.0], [20.0]], theta=[0.5, 0.5],
                            C=[100.0], K=[[1.0], [1.0]], noise_sigma=0.0)

    def test_hand_case(self):
        assert_allclose(participation_prob(20.0, 0, 0, self.params()), 0.75)

    def test_floor_and_ceiling(self):
        params = self.params()
        assert participation_prob(params.w_low / params.beta, 0, 0, params) == 0.0
        assert participation_prob(params.w_high[0, 0] / params.beta, 0, 0, params) == 1.0

    def test_affine_slope(self):
        params = self.params()
        slope = params.beta / (params.w_high[0, 0] - params.w_low)
        p0, p1 = 15.0, 21.0
        q0 = participation_prob(p0, 0, 0, params)
        q1 = participation_prob(p1, 0, 0, params)
        assert_allclose((q1 - q0) / (p1 - p0), slope, rtol=1e-12)

    def test_clamped_outside_range_with_warning(self):
        params = self.params()
        with pytest.warns(RuntimeWarning):
            assert participation_prob(1.0, 0, 0, params) == 0.0
        with pytest.warns(RuntimeWarning):
            assert participation_prob(30.0, 0, 0, params) == 1.0


class TestEffectiveDemandAndDrivers:

    def test_product_identity(self):
        params = MarketParams.table2(seed=4)
        sample = mean_sample(params)
        rng = np.random.default_rng(7)
        prices = feasible_profile(params, rng)
        for i, h in [(0, 0), (2, 5), (4, 9)]:
            expected = (demand(i, h, prices, sample.c[h], params)
                        * participation_prob(prices[i, h], i, h, params))
            assert_allclose(effective_demand(i, h, prices, sample.c[h], params),
                            expected)

    def test_floor_wage_kills_effective_demand(self):
        params = tiny_params()
        prices = np.full((2, 1), params.w_low / params.beta)
        assert effective_demand(0, 0, prices, 50.0, params) == 0.0

    def test_drivers_serving(self):
        params = MarketParams(p_bar=35.0, caps=[30.0], beta=0.9, w_low=12.0,
                              w_high=[[20.0]], theta=[0.0], C=[100.0],
                              K=[[1000.0]], noise_sigma=0.0)
        assert_allclose(drivers_serving(0, 0, 20.0, params), 750.0)
        assert drivers_serving(0, 0, params.w_low / params.beta, params) == 0.0
        assert_allclose(
            drivers_serving(0, 0, params.w_high[0, 0] / params.beta, params),
            1000.0,
        )


class TestSampling:

    def test_zero_noise_degenerate(self):
        params = tiny_params(noise_sigma=0.0)
        rng = np.random.default_rng(0)
        s = sample_uncertainty(rng, params)
        assert_allclose(s.c, params.C / params.K.sum(axis=0))

    def test_bounded_support_and_mean(self):
        params = MarketParams.table2(seed=0, noise_sigma=0.1)
        base = params.C / params.K.sum(axis=0)
        rng = np.random.default_rng(11)
        draws = np.stack([sample_uncertainty(rng, params).c for _ in range(100_000)])
        assert np.all(draws >= base * 0.9 - 1e-12)
        assert np.all(draws <= base * 1.1 + 1e-12)
        # uniform on [-sigma, sigma] relative: sd = sigma/sqrt(3) per area
        se = base * 0.1 / np.sqrt(3.0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - base) <= 3.0 * se)

    def test_nonpositive_sample_rejected(self):
        with pytest.raises(MarketError):
            MarketSample(c=[0.0])


class TestCostGradient:

    def test_matches_finite_differences(self):
        params = MarketParams.table2(seed=0)
        rng = np.random.default_rng(21)
        h_step = 1e-5
        for _ in range(20):
            prices = feasible_profile(params, rng)
            sample = sample_uncertainty(rng, params)
            i = int(rng.integers(params.num_firms))
            grad = sampled_cost_gradient(i, prices, sample, params)
            for h in range(params.num_areas):
                up, dn = prices.copy(), prices.copy()
                up[i, h] += h_step
                dn[i, h] -= h_step
                fd = (sampled_cost(i, up, sample, params)
                      - sampled_cost(i, dn, sample, params)) / (2 * h_step)
                assert abs(fd - grad[h]) <= 1e-6 * max(1.0, abs(fd))

    def test_affine_in_sample(self):
        params = MarketParams.table2(seed=1)
        rng = np.random.default_rng(22)
        prices = feasible_profile(params, rng)
        c1 = sample_uncertainty(rng, params)
        c2 = sample_uncertainty(rng, params)
        mid = MarketSample(c=0.5 * (c1.c + c2.c))
        g_mid = sampled_cost_gradient(1, prices, mid, params)
        g_avg = 0.5 * (sampled_cost_gradient(1, prices, c1, params)
                       + sampled_cost_gradient(1, prices, c2, params))
        assert_allclose(g_mid, g_avg, rtol=0, atol=1e-10)

    def test_floor_wage_structure(self):
        # at beta*p = w_low the participation factor vanishes: the cost is 0
        # and only the q'(p) product-rule term survives in the gradient
        params = tiny_params(theta=(0.0, 0.0), noise_sigma=0.0)
        p_floor = params.w_low / params.beta
        prices = np.full((2, 1), p_floor)
        sample = mean_sample(params)
        d = demand(0, 0, prices, sample.c[0], params)
        assert d > 0
        assert sampled_cost(0, prices, sample, params) == 0.0
        dq = params.beta / (params.w_high[0, 0] - params.w_low)
        expected = -dq * p_floor * (d - params.beta * params.K[0, 0])
        assert_allclose(sampled_cost_gradient(0, prices, sample, params),
                        [expected], rtol=1e-12)

    def test_symmetric_firms_symmetric_gradient(self):
        params = tiny_params(theta=(0.7, 0.7), noise_sigma=0.0)
        prices = np.full((2, 1), 6.5)
        sample = mean_sample(params)
        g0 = sampled_cost_gradient(0, prices, sample, params)
        g1 = sampled_cost_gradient(1, prices, sample, params)
        assert_allclose(g0, g1, rtol=1e-14)

    def test_shape_checks(self):
        params = tiny_params()
        sample = mean_sample(params)
        with pytest.raises(MarketError):
            sampled_cost_gradient(0, np.zeros((3, 1)), sample, params)
        with pytest.raises(MarketError):
            sampled_cost_gradient(0, np.zeros((2, 1)), MarketSample(c=[1.0, 1.0]),
                                  params)

    def test_cost_convex_along_own_price_segments(self):
        params = MarketParams.table2(seed=0)
        rng = np.random.default_rng(23)
        lo = np.maximum(0.0, params.w_low / params.beta)
        for _ in range(200):
            i = int(rng.integers(params.num_firms))
            prices = feasible_profile(params, rng)
            hi = params.w_high[i] / params.beta
            xa = lo + rng.random(params.num_areas) * (hi - lo)
            xb = lo + rng.random(params.num_areas) * (hi - lo)
            sample = sample_uncertainty(rng, params)

            def cost(own):
                p = prices.copy()
                p[i] = own
                return sampled_cost(i, p, sample, params)

            mid = cost(0.5 * (xa + xb))
            assert mid <= 0.5 * (cost(xa) + cost(xb)) + 1e-9


class TestMarketOracle:

    def test_batch_matches_loop(self):
        params = MarketParams.table2(seed=5)
        oracle = MarketOracle(params)
        rng = np.random.default_rng(31)
        x = feasible_profile(params, rng)
        samples = [oracle.draw(rng) for _ in range(16)]
        loop = np.mean([oracle.gradient(2, x, s) for s in samples], axis=0)
        assert_allclose(oracle.batch_gradient(2, x, samples), loop, rtol=1e-12)
        frozen = oracle.freeze_batch(samples)
        assert_allclose(oracle.batch_gradient(2, x, frozen), loop, rtol=1e-12)

    def test_invalid_params_rejected(self):
        with pytest.raises(MarketError):
            MarketOracle(tiny_params(w_high=3.0))


class TestBuildGame:

    def test_table2_geometry(self):
        game = build_game("table2", seed=0)
        assert game.num_agents == 5
        assert game.dim_local == 10
        assert game.dim_coupling == 10
        for box in game.local_sets:
            assert_allclose(box.lower, np.full(10, 12.0 / 0.9))
        assert validate_game(game).ok

    def test_slater_at_lower_corner(self):
        from sgnep.game import coupling_value
        for seed in range(4):
            game = build_game("table2", seed=seed)
            lows = np.stack([b.lower for b in game.local_sets])
            assert np.all(coupling_value(game.coupling, lows) < 0)

    def test_coupling_is_average_price_cap(self):
        params = MarketParams.table2(seed=0)
        game = build_game(params)
        from sgnep.game import coupling_value
        rng = np.random.default_rng(1)
        prices = feasible_profile(params, rng)
        assert_allclose(coupling_value(game.coupling, prices),
                        prices.mean(axis=0) - params.caps, rtol=1e-12)

    def test_unknown_preset(self):
        with pytest.raises(MarketError):
            build_game("table3")

    def test_invalid_params_rejected(self):
        with pytest.raises(MarketError):
            build_game(tiny_params(w_high=3.0))


class TestRealizedOutcomes:

    def params(self):
        return MarketParams(p_bar=35.0, caps=[30.0, 30.0], beta=0.9, w_low=12.0,
                            w_high=np.full((2, 2), 20.0), theta=[0.5, 0.5],
                            C=np.full(2, 4000.0), K=np.full((2, 2), 1500.0),
                            noise_sigma=0.1)

    def test_certain_participation(self):
        params = self.params()
        x = np.full((2, 2), params.w_high[0, 0] / params.beta)
        out = realized_outcomes(x, realizations=64, seed=0, params=params,
                                saa_samples=32)
        assert_allclose(out.participation_freq, np.ones((2, 2)))
        assert_allclose(out.satisfaction_mean, params.K.sum(axis=0) / params.C)
        assert_allclose(out.satisfaction_stderr, np.zeros(2))
        assert_allclose(out.profit_ratio_mean, np.ones(2), rtol=1e-12)

    def test_floor_wage_no_participation(self):
        params = self.params()
        x = np.full((2, 2), params.w_low / params.beta)
        out = realized_outcomes(x, realizations=64, seed=0, params=params,
                                saa_samples=32)
        assert_allclose(out.participation_freq, np.zeros((2, 2)))
        assert_allclose(out.satisfaction_mean, np.zeros(2))
        # nothing at stake: expected profit 0 reports ratio 0, not 0/0
        assert_allclose(out.profit_ratio_mean, np.zeros(2))

    def test_frequency_matches_participation_prob(self):
        params = self.params()
        rng = np.random.default_rng(9)
        x = feasible_profile(params, rng)
        reps = 400
        out = realized_outcomes(x, realizations=reps, seed=17, params=params,
                                saa_samples=16)
        for i in range(2):
            for h in range(2):
                q = participation_prob(x[i, h], i, h, params)
                se = np.sqrt(max(q * (1 - q), 1e-12) / reps)
                assert abs(out.participation_freq[i, h] - q) <= 3 * se + 1e-12

    def test_single_realization_defined(self):
        params = self.params()
        rng = np.random.default_rng(10)
        x = feasible_profile(params, rng)
        out = realized_outcomes(x, realizations=1, seed=3, params=params,
                                saa_samples=8)
        for arr in (out.profit_ratio_mean, out.profit_ratio_stderr,
                    out.satisfaction_mean, out.satisfaction_stderr,
                    out.participation_freq, out.expected_profit):
            assert np.all(np.isfinite(arr))
        assert_allclose(out.profit_ratio_stderr, np.zeros(2))
        assert_allclose(out.satisfaction_stderr, np.zeros(2))

    def test_determinism(self):
        params = self.params()
        x = np.full((2, 2), 18.0)
        a = realized_outcomes(x, realizations=32, seed=5, params=params,
                              saa_samples=16)
        b = realized_outcomes(x, realizations=32, seed=5, params=params,
                              saa_samples=16)
        assert_array_equal(a.profit_ratio_mean, b.profit_ratio_mean)
        assert_array_equal(a.satisfaction_mean, b.satisfaction_mean)

    def test_input_validation(self):
        params = self.params()
        with pytest.raises(MarketError):
            realized_outcomes(np.zeros((3, 2)), realizations=4, seed=0,
                              params=params)
        with pytest.raises(MarketError):
            realized_outcomes(np.full((2, 2), 18.0), realizations=0, seed=0,
                              params=params)


class TestMeanSample:

    def test_mean_sample_matches_zero_noise_draw(self):
        params = tiny_params(noise_sigma=0.0)
        drawn = sample_uncertainty(np.random.default_rng(0), params)
        assert_allclose(mean_sample(params).c, drawn.c)
