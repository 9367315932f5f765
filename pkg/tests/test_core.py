import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sharegame as sg
from sharegame.errors import ConfigurationError, DomainError

from conftest import state_from_edges


class TestMpcr:
    def test_empty_neighborhood_returns_one_exactly(self, spec16):
        assert sg.mpcr(spec16, 0) == 1.0

    def test_purely_congestive_values(self, spec16):
        assert sg.mpcr(spec16, 1) == pytest.approx(0.8, abs=1e-12)
        assert sg.mpcr(spec16, 3) == pytest.approx(0.4, abs=1e-12)

    def test_out_of_range_degree(self, spec16):
        with pytest.raises(DomainError):
            sg.mpcr(spec16, -1)
        spec = sg.MpcrSpec.subcongestive([1.9, 1.7])
        with pytest.raises(DomainError):
            sg.mpcr(spec, 3)

    def test_k_bounds(self):
        for bad in (1.0, 2.0, 0.5, 2.5):
            with pytest.raises(DomainError):
                sg.MpcrSpec.purely_congestive(bad)

    def test_sub_and_super_validation(self):
        sub = sg.MpcrSpec.subcongestive([1.9, 1.6, 1.3])
        assert sub.m(2) == pytest.approx(1.6 / 3)
        with pytest.raises(DomainError):
            sg.MpcrSpec.subcongestive([1.5, 1.6])  # not decreasing
        sup = sg.MpcrSpec.supercongestive([1.5, 1.8, 2.5])
        assert sup.m(3) == pytest.approx(2.5 / 4)
        with pytest.raises(DomainError):
            sg.MpcrSpec.supercongestive([1.5, 1.4])  # not increasing
        with pytest.raises(DomainError):
            sg.MpcrSpec.supercongestive([1.5, 3.1])  # k(2) >= 3 breaks m < 1

    def test_m_below_one_for_nonempty(self):
        for spec in (sg.MpcrSpec.purely_congestive(1.99),
                     sg.MpcrSpec.subcongestive([1.9, 1.5]),
                     sg.MpcrSpec.supercongestive([1.2, 1.9])):
            for d in range(1, spec.max_degree() + 1):
                assert spec.m(d) < 1.0

    def test_flat_test_hook(self):
        flat = sg.MpcrSpec.flat(0.9)
        assert flat.m(0) == flat.m(3) == 0.9


class TestPayoffExternality:
    def test_empty_network_zero_payoff(self, spec16):
        net = sg.NetworkState.empty(4)
        c = sg.ContributionProfile(np.array([0.0, 0.25, 0.5, 1.0]), q=21)
        for i in range(4):
            assert sg.payoff(net, c, spec16, i) == pytest.approx(0.0, abs=1e-12)
            assert sg.externality(net, c, spec16, i) == pytest.approx(0.0, abs=1e-12)

    def test_complete_network_full_contribution(self, spec16):
        net = sg.NetworkState.complete(4)
        c = sg.ContributionProfile(np.ones(4), q=21)
        for i in range(4):
            assert sg.payoff(net, c, spec16, i) == pytest.approx(0.6, abs=1e-12)
            assert sg.externality(net, c, spec16, i) == pytest.approx(1.2, abs=1e-12)

    def test_mutual_dyad(self, spec16):
        net, c = state_from_edges([(0, 1), (1, 0)], [1, 1, 0, 0])
        assert sg.payoff(net, c, spec16, 0) == pytest.approx(0.6, abs=1e-12)
        assert sg.payoff(net, c, spec16, 2) == pytest.approx(0.0, abs=1e-12)
        assert sg.externality(net, c, spec16, 0) == pytest.approx(0.8, abs=1e-12)

    def test_decomposition_identity_random_states(self, spec16):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            adj = (rng.random((n, n)) < 0.5).astype(np.int8)
            np.fill_diagonal(adj, 1)
            net = sg.NetworkState(adj)
            c = sg.ContributionProfile(rng.integers(0, 21, n) / 20, q=21)
            i = int(rng.integers(n))
            d = int(net.out_degrees()[i])
            own = (spec16.m(d) - 1.0) * c.c[i]
            assert sg.payoff(net, c, spec16, i) - sg.externality(net, c, spec16, i) \
                == pytest.approx(own, abs=1e-12)

    def test_aggregate_accounting(self, spec16):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = 4
            # force out-degree >= 1 so the effective multiplier is exactly k
            links = [np.zeros(n - 1, dtype=int) for _ in range(n)]
            for row in links:
                row[rng.integers(n - 1)] = 1
                row |= rng.random(n - 1) < 0.5
            net = sg.NetworkState.from_out_links(links)
            c = sg.ContributionProfile(rng.integers(0, 21, n) / 20, q=21)
            total = sum(sg.payoff(net, c, spec16, i) for i in range(n))
            assert total == pytest.approx(0.6 * c.c.sum(), abs=1e-12)


class TestBehavioralBeta:
    def test_zero_contribution_gives_zero(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.TREATMENT, 1.6, np.array([0.8, 0.8, 0.0]))
        assert sg.behavioral_beta([1, 1, 0], 0.0, info, 1, table2_theta, spec16) == 0.0

    def test_no_links_gives_zero(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.TREATMENT, 1.6, np.array([0.8, 0.8, 0.0]))
        assert sg.behavioral_beta([0, 0, 0], 1.0, info, 1, table2_theta, spec16) == 0.0

    def test_hand_worked_example(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.TREATMENT, 0.8, np.array([0.8, 0.0, 0.0]))
        value = sg.behavioral_beta([1, 0, 0], 1.0, info, 1, table2_theta, spec16)
        gen = (20.1884 - 6.9893) / 9 * (1 * 0.8 * 1.0) * 0.8
        direct = 24.2407 / 3 * 0.8 * 1.0 * 0.8
        assert gen == pytest.approx(0.9386, abs=1e-4)
        assert direct == pytest.approx(5.1714, abs=1e-4)
        assert value == pytest.approx(gen + direct, abs=1e-12)

    def test_treat_flag_needs_treatment_regime(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.BASELINE, 0.8)
        with pytest.raises(DomainError):
            sg.behavioral_beta([1, 0, 0], 1.0, info, 1, table2_theta, spec16)

    def test_direct_term_silently_zero_under_baseline(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.BASELINE, 0.8)
        value = sg.behavioral_beta([1, 0, 0], 1.0, info, 0, table2_theta, spec16)
        assert value == pytest.approx(20.1884 / 9 * 0.8 * 0.8, abs=1e-12)

    def test_het_block_without_covariates_is_configuration_error(self, spec16):
        zeros = np.zeros(3)
        theta = sg.ThetaParams(1.0, 2.0, 0.0, 0.0, het_cost=zeros,
                               het_treat_dir=zeros, het_gen=zeros, het_treat_gen=zeros)
        info = sg.InfoSet(sg.Regime.BASELINE, 0.5)
        with pytest.raises(ConfigurationError):
            sg.behavioral_beta([1, 0, 0], 1.0, info, 0, theta, spec16)

    def test_sender_permutation_invariance(self, table2_theta, spec16):
        rng = np.random.default_rng(3)
        for _ in range(100):
            links = rng.integers(0, 2, 3)
            v = rng.random(3)
            info = sg.InfoSet(sg.Regime.TREATMENT, float(v.sum()), v)
            base = sg.behavioral_beta(links, 0.75, info, 1, table2_theta, spec16)
            perm = rng.permutation(3)
            info_p = sg.InfoSet(sg.Regime.TREATMENT, float(v.sum()), v[perm])
            permuted = sg.behavioral_beta(links[perm], 0.75, info_p, 1,
                                          table2_theta, spec16)
            assert permuted == pytest.approx(base, abs=1e-12)


class TestPotential:
    def test_zero_contribution(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.BASELINE, 0.9)
        assert sg.potential([1, 1, 1], 0.0, info, 0, table2_theta, spec16) == 0.0

    def test_zero_theta(self, spec16):
        info = sg.InfoSet(sg.Regime.BASELINE, 0.9)
        assert sg.potential([1, 0, 1], 1.0, info, 0, sg.ThetaParams(), spec16) == 0.0

    def test_baseline_hand_value(self, table2_theta, spec16):
        info = sg.InfoSet(sg.Regime.BASELINE, 0.8)
        phi = sg.potential([1, 0, 0], 1.0, info, 0, table2_theta, spec16)
        expected = 5.2368 * (0.8 - 1.0) + 20.1884 / 9 * 0.8 * 0.8
        assert phi == pytest.approx(expected, abs=1e-12)
        assert phi == pytest.approx(0.3883, abs=5e-5)

    @settings(max_examples=200, deadline=None)
    @given(
        c_step=st.integers(min_value=0, max_value=20),
        links=st.tuples(*(st.integers(0, 1),) * 3),
        incoming=st.floats(min_value=0.0, max_value=3.0),
        treat=st.booleans(),
    )
    def test_linear_in_contribution(self, c_step, links, incoming, treat):
        theta = sg.ThetaParams(5.2368, 20.1884, -6.9893, 24.2407)
        spec = sg.MpcrSpec.purely_congestive(1.6)
        if treat:
            v = np.array([incoming, 0.0, 0.0])
            info = sg.InfoSet(sg.Regime.TREATMENT, float(v.sum()), v)
        else:
            info = sg.InfoSet(sg.Regime.BASELINE, incoming)
        c = c_step / 20
        phi_c = sg.potential(list(links), c, info, int(treat), theta, spec)
        phi_0 = sg.potential(list(links), 0.0, info, int(treat), theta, spec)
        phi_1 = sg.potential(list(links), 1.0, info, int(treat), theta, spec)
        assert phi_c - phi_0 == pytest.approx(c * (phi_1 - phi_0), abs=1e-12)


class TestDomainTypes:
    def test_network_state_invariants(self):
        with pytest.raises(DomainError):
            sg.NetworkState(np.zeros((4, 4), dtype=int))  # diagonal not fixed
        bad = np.eye(4, dtype=int)
        bad[0, 1] = 2
        with pytest.raises(DomainError):
            sg.NetworkState(bad)
        with pytest.raises(DomainError):
            sg.NetworkState(np.eye(1, dtype=int))
        with pytest.raises(DomainError):
            sg.NetworkState(np.eye(25, dtype=int))

    def test_degree_conventions(self):
        net, _ = state_from_edges([(0, 1), (0, 2), (3, 0)], [0, 0, 0, 0])
        assert list(net.out_degrees()) == [2, 0, 0, 1]
        assert list(net.in_degrees()) == [1, 1, 1, 0]
        assert list(net.out_links(0)) == [1, 1, 0]

    def test_from_out_links_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            links = [rng.integers(0, 2, n - 1) for _ in range(n)]
            net = sg.NetworkState.from_out_links(links)
            for i in range(n):
                assert np.array_equal(net.out_links(i), links[i])

    def test_contribution_grid_membership(self):
        with pytest.raises(DomainError):
            sg.ContributionProfile(np.array([0.33, 0.0]), q=21)
        ok = sg.ContributionProfile(np.array([0.35, 1.0]), q=21)
        assert list(ok.tokens()) == [7, 20]
        with pytest.raises(DomainError):
            sg.ContributionProfile(np.array([-0.05, 0.0]), q=21)

    def test_theta_het_all_or_none(self):
        with pytest.raises(ConfigurationError):
            sg.ThetaParams(1, 2, 3, 4, het_cost=np.zeros(3))
        zeros = np.zeros(3)
        theta = sg.ThetaParams(1, 2, 3, 4, het_cost=zeros, het_treat_dir=zeros,
                               het_gen=zeros, het_treat_gen=zeros)
        assert theta.flat().shape == (16,)
        back = sg.ThetaParams.from_flat(theta.flat())
        assert np.array_equal(back.flat(), theta.flat())

    def test_theta_rejects_non_finite(self):
        with pytest.raises(DomainError):
            sg.ThetaParams(np.inf, 0, 0, 0)

    def test_info_set_consistency(self):
        with pytest.raises(DomainError):
            sg.InfoSet(sg.Regime.TREATMENT, 1.0, np.array([0.3, 0.3, 0.3]))
        with pytest.raises(DomainError):
            sg.InfoSet(sg.Regime.TREATMENT, 1.0)
        with pytest.raises(DomainError):
            sg.InfoSet(sg.Regime.BASELINE, 1.0, np.array([0.5, 0.5, 0.0]))
        ok = sg.InfoSet(sg.Regime.TREATMENT, 0.9, np.array([0.3, 0.3, 0.3]))
        assert ok.incoming_by_sender.sum() == pytest.approx(0.9, abs=1e-12)

    def test_info_sets_from_state(self, spec16):
        net, c = state_from_edges([(0, 1), (1, 0), (2, 0)], [1, 1, 0.5, 0])
        infos = sg.info_sets_from_state(net, c, spec16, sg.Regime.TREATMENT)
        # player 0 receives from 1 (degree 1, c=1) and from 2 (degree 1, c=0.5)
        assert infos[0].incoming_total == pytest.approx(0.8 + 0.4, abs=1e-12)
        assert infos[0].incoming_by_sender[0] == pytest.approx(0.8, abs=1e-12)
        assert infos[0].incoming_by_sender[1] == pytest.approx(0.4, abs=1e-12)
        base = sg.info_sets_from_state(net, c, spec16, sg.Regime.BASELINE)
        assert base[0].incoming_by_sender is None
