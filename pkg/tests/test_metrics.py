"""Steady-state metric bundle checks on frozen states."""

import numpy as np
import pytest

from mter import MassDistribution, SMDPParams, compute_metrics

from conftest import consistent_state
from _nets import ring_with_demand, shuttle, two_cycle

PARAMS = SMDPParams(beta=0.1, theta=10.0)


def frozen_metrics(network, demand, x, y, **kwargs):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    env, _, policies = consistent_state(x, y, network, demand, PARAMS)
    masses = MassDistribution(x=x, y=y)
    return compute_metrics(masses, env, policies, demand, network, **kwargs), \
        env, policies


def random_feasible(network, demand, seed, M):
    rng = np.random.Generator(np.random.Philox(seed))
    m = network.n_links
    K = demand.n_destinations
    x = rng.uniform(0.1, 1.0, size=m)
    y = rng.uniform(0.0, 1.0, size=(m, K))
    y[network.tail[:, None] == np.asarray(demand.dest_nodes)[None, :]] = 0.0
    scale = M / (x.sum() + y.sum())
    return x * scale, y * scale


class TestCostAndProfit:
    def test_uniform_cost_telescopes_to_pool(self):
        # (u/t)*(6t) summed over links is just 6*sum(u), tolls absent
        network, demand = ring_with_demand()
        x, y = random_feasible(network, demand, 3, network.M)
        metrics, _, _ = frozen_metrics(network, demand, x, y)
        assert metrics.cost_rate == pytest.approx(6.0 * network.M, rel=1e-12)
        assert metrics.total_mass == pytest.approx(network.M, rel=1e-12)

    def test_profit_decomposition(self):
        network, demand = ring_with_demand()
        for seed in range(3):
            x, y = random_feasible(network, demand, seed, network.M)
            metrics, _, _ = frozen_metrics(network, demand, x, y,
                                           cost_empty=5.0, cost_hired=7.5)
            assert metrics.profit_rate + metrics.cost_rate == pytest.approx(
                metrics.revenue_rate, rel=1e-9, abs=1e-9)

    def test_asymmetric_status_costs(self):
        network, demand = shuttle()
        x = np.array([4.0, 2.0])
        y = np.array([[0.0], [4.0]])
        metrics, _, _ = frozen_metrics(network, demand, x, y,
                                       cost_empty=2.0, cost_hired=10.0)
        assert metrics.cost_rate == pytest.approx(2.0 * 6.0 + 10.0 * 4.0,
                                                  rel=1e-12)

    def test_revenue_matches_explicit_sum(self):
        network, demand = shuttle(fare=5.0)
        x = np.array([6.0, 3.0])
        y = np.array([[0.0], [1.0]])
        metrics, env, policies = frozen_metrics(network, demand, x, y)
        # orders appear at node 1, the head of link 0, all bound for node 0
        want = env.f[0] * env.m[0] * demand.probs[1, 0] * policies.xi[1, 0] * 5.0
        assert metrics.revenue_rate == pytest.approx(want, rel=1e-12)


class TestTollRevenue:
    def test_fee_times_entering_flow(self):
        network, demand = shuttle(toll_ab=2.0)
        x = np.array([6.0, 2.0])
        y = np.array([[0.0], [2.0]])
        metrics, env, _ = frozen_metrics(network, demand, x, y)
        entering = (x[0] + y[0].sum()) / env.t[0]
        assert metrics.toll_revenue_rate == pytest.approx(2.0 * entering,
                                                          abs=1e-10)

    def test_tolls_feed_cost_side(self):
        network, demand = shuttle(toll_ab=2.0)
        x = np.array([6.0, 2.0])
        y = np.array([[0.0], [2.0]])
        with_toll, _, _ = frozen_metrics(network, demand, x, y)
        base_net, base_dem = shuttle(toll_ab=0.0)
        without, _, _ = frozen_metrics(base_net, base_dem, x, y)
        assert with_toll.cost_rate == pytest.approx(
            without.cost_rate + with_toll.toll_revenue_rate, rel=1e-12)

    def test_no_tolls_no_revenue(self):
        network, demand = ring_with_demand()
        x, y = random_feasible(network, demand, 1, network.M)
        metrics, _, _ = frozen_metrics(network, demand, x, y)
        assert metrics.toll_revenue_rate == 0.0


class TestServiceQuality:
    def test_fulfillment_bounded_by_one(self):
        network, demand = ring_with_demand()
        for seed in range(5):
            x, y = random_feasible(network, demand, seed, network.M)
            metrics, _, _ = frozen_metrics(network, demand, x, y)
            assert 0.0 <= metrics.fulfillment <= 1.0 + 1e-12
            assert metrics.fulfillment_matched <= 1.0 + 1e-12
            assert metrics.fulfillment <= metrics.fulfillment_matched + 1e-15
            assert metrics.fulfillment_defined

    def test_saturated_matching_link_approaches_gamma_cap(self):
        for gamma, want in [(0.8, 0.8), (1.7, 1.0)]:
            network, demand = shuttle(lam=30.0, gamma=gamma)
            t0 = network.t0[0]
            x = np.array([1e4 * 30.0 * t0, 1.0])
            y = np.zeros((2, 1))
            metrics, _, _ = frozen_metrics(network, demand, x, y)
            assert metrics.fulfillment_matched == pytest.approx(want, rel=0.01)

    def test_zero_demand_flags(self):
        network, demand = two_cycle(lam=0.0)
        x = np.array([5.0, 5.0])
        y = np.zeros((2, 0))
        metrics, _, _ = frozen_metrics(network, demand, x, y)
        assert metrics.revenue_rate == 0.0
        assert metrics.profit_rate == -metrics.cost_rate
        assert not metrics.fulfillment_defined
        assert metrics.fulfillment == 1.0
        assert metrics.vacant_hired_ratio == float("inf")

    def test_ratio_of_status_masses(self):
        network, demand = shuttle()
        x = np.array([6.0, 2.0])
        y = np.array([[0.0], [2.0]])
        metrics, _, _ = frozen_metrics(network, demand, x, y)
        assert metrics.vacant_hired_ratio == pytest.approx(8.0 / 2.0,
                                                           rel=1e-12)


class TestAverageSpeed:
    def test_weighted_mean_bounds(self):
        network, demand = ring_with_demand()
        for seed in range(4):
            x, y = random_feasible(network, demand, seed, network.M)
            metrics, env, _ = frozen_metrics(network, demand, x, y)
            speeds = network.length / env.t
            assert speeds.min() - 1e-12 <= metrics.avg_speed
            assert metrics.avg_speed <= speeds.max() + 1e-12
            assert metrics.avg_speed > 0

    def test_single_speed_network_is_exact(self):
        network, demand = two_cycle(lam=0.0, t=0.25)
        x = np.array([7.0, 3.0])
        y = np.zeros((2, 0))
        metrics, env, _ = frozen_metrics(network, demand, x, y)
        # both links share length/t, so the weighted mean collapses to it
        assert metrics.avg_speed == pytest.approx(
            float(network.length[0] / env.t[0]), rel=1e-9)


class TestSerialization:
    def test_to_dict_round_trip(self):
        network, demand = shuttle()
        x = np.array([6.0, 3.0])
        y = np.array([[0.0], [1.0]])
        metrics, _, _ = frozen_metrics(network, demand, x, y)
        d = metrics.to_dict()
        assert d["profit_rate"] == metrics.profit_rate
        assert d["fulfillment_defined"] is True
        assert set(d) == {
            "revenue_rate", "cost_rate", "profit_rate", "fulfillment",
            "fulfillment_matched", "fulfillment_defined",
            "vacant_hired_ratio", "avg_speed", "toll_revenue_rate",
            "total_mass",
        }
