import numpy as np
import pytest

import sharegame as sg
from sharegame.choices import choice_distribution, link_index
from sharegame.dynamics import _player_coefficients, build_info_sets
from sharegame.errors import ConfigurationError, DomainError

from conftest import state_from_edges


def _dyad_state():
    return state_from_edges([(0, 1), (1, 0)], [1, 1, 0, 0])


class TestStepExact:
    def test_seed_determinism(self, table2_theta, spec16):
        net, c = _dyad_state()
        a = sg.step_exact(net, c, sg.Regime.TREATMENT, table2_theta, spec16,
                          np.random.default_rng(123))
        b = sg.step_exact(net, c, sg.Regime.TREATMENT, table2_theta, spec16,
                          np.random.default_rng(123))
        assert np.array_equal(a[0].adj, b[0].adj)
        assert np.array_equal(a[1].c, b[1].c)

    def test_revision_subset_keeps_others_fixed(self, table2_theta, spec16):
        net, c = _dyad_state()
        rng = np.random.default_rng(7)
        for _ in range(20):
            new_net, new_c = sg.step_exact(net, c, sg.Regime.TREATMENT,
                                           table2_theta, spec16, rng, revision=[0])
            for i in (1, 2, 3):
                assert np.array_equal(new_net.out_links(i), net.out_links(i))
                assert new_c.c[i] == c.c[i]

    def test_uniform_theta_reproducible(self, spec16):
        net, c = _dyad_state()
        rng = np.random.default_rng(0)
        state = sg.step_exact(net, c, sg.Regime.BASELINE, sg.ThetaParams(), spec16, rng)
        again = sg.step_exact(net, c, sg.Regime.BASELINE, sg.ThetaParams(), spec16,
                              np.random.default_rng(0))
        assert np.array_equal(state[0].adj, again[0].adj)

    def test_large_n_refused(self, table2_theta, spec16):
        net = sg.NetworkState.empty(17)
        c = sg.ContributionProfile(np.zeros(17), q=5)
        with pytest.raises(DomainError):
            sg.step_exact(net, c, sg.Regime.BASELINE, table2_theta, spec16,
                          np.random.default_rng(0))

    @pytest.mark.slow
    def test_empirical_frequencies_match_choice_distribution(self, spec16):
        # 1e5 steps from a fixed concentrated state; per-player TV against
        # enumeration (the fixture is sharp enough that sampling noise at
        # this replicate count sits well under the 0.01 bound)
        theta = sg.ThetaParams(3 * 5.2368, 3 * 20.1884, 3 * -6.9893, 3 * 24.2407)
        net, c = state_from_edges([(0, 1), (1, 0), (2, 3), (3, 2)], [1, 1, 1, 1])
        regime = sg.Regime.TREATMENT
        infos = sg.info_sets_from_state(net, c, spec16, regime)
        exact = [
            choice_distribution(infos[i], 1, theta, spec16, n=4, q=21)
            for i in range(4)
        ]
        counts = [np.zeros((8, 21)) for _ in range(4)]
        rng = np.random.default_rng(2024)
        reps = 100_000
        for _ in range(reps):
            new_net, new_c = sg.step_exact(net, c, regime, theta, spec16, rng)
            for i in range(4):
                b = link_index(new_net.out_links(i))
                k = int(round(new_c.c[i] * 20))
                counts[i][b, k] += 1
        for i in range(4):
            tv = 0.5 * np.abs(counts[i] / reps - exact[i].probs).sum()
            assert tv < 0.01, f"player {i}: TV {tv:.4f}"


class TestStepMh:
    def test_zero_iters_returns_previous(self, table2_theta, spec16):
        net, c = _dyad_state()
        new_net, new_c = sg.step_mh(net, c, sg.Regime.TREATMENT, table2_theta,
                                    spec16, np.random.default_rng(1), iters=0)
        assert np.array_equal(new_net.adj, net.adj)
        assert np.array_equal(new_c.c, c.c)

    def test_zero_theta_every_proposal_accepted(self, spec16):
        # with a flat potential the chain is a uniform random walk; after one
        # sweep the contribution must have been redrawn whenever proposed
        net, c = _dyad_state()
        rng = np.random.default_rng(3)
        moved = 0
        for _ in range(50):
            _, new_c = sg.step_mh(net, c, sg.Regime.BASELINE, sg.ThetaParams(),
                                  spec16, rng, iters=5)
            moved += int(not np.array_equal(new_c.c, c.c))
        assert moved >= 45

    def test_determinism(self, table2_theta, spec16):
        net, c = _dyad_state()
        a = sg.step_mh(net, c, sg.Regime.TREATMENT, table2_theta, spec16,
                       np.random.default_rng(5), iters=50)
        b = sg.step_mh(net, c, sg.Regime.TREATMENT, table2_theta, spec16,
                       np.random.default_rng(5), iters=50)
        assert np.array_equal(a[0].adj, b[0].adj) and np.array_equal(a[1].c, b[1].c)

    def test_works_beyond_enumeration_cap(self, table2_theta, spec16):
        n = 18
        net = sg.NetworkState.empty(n)
        c = sg.ContributionProfile(np.zeros(n), q=5)
        new_net, new_c = sg.step_mh(net, c, sg.Regime.BASELINE, table2_theta,
                                    spec16, np.random.default_rng(2), iters=20)
        assert new_net.n == n

    @pytest.mark.slow
    def test_stationary_distribution_matches_exact(self, spec16):
        # 5000 sweeps, 1e4 replicates, per-player TV against enumeration
        theta = sg.ThetaParams(3 * 5.2368, 3 * 20.1884, 3 * -6.9893, 3 * 24.2407)
        net, c = state_from_edges([(0, 1), (1, 0), (2, 3), (3, 2)], [1, 1, 1, 1])
        regime = sg.Regime.TREATMENT
        infos = sg.info_sets_from_state(net, c, spec16, regime)
        exact = [
            choice_distribution(infos[i], 1, theta, spec16, n=4, q=21)
            for i in range(4)
        ]
        counts = [np.zeros((8, 21)) for _ in range(4)]
        rng = np.random.default_rng(77)
        reps = 10_000
        for _ in range(reps):
            new_net, new_c = sg.step_mh(net, c, regime, theta, spec16,
                                        rng, iters=5000)
            for i in range(4):
                b = link_index(new_net.out_links(i))
                k = int(round(new_c.c[i] * 20))
                counts[i][b, k] += 1
        for i in range(4):
            tv = 0.5 * np.abs(counts[i] / reps - exact[i].probs).sum()
            assert tv < 0.02, f"player {i}: TV {tv:.4f}"


class TestSimulatePanel:
    def test_single_period_config(self, table2_theta):
        cfg = sg.SimConfig(theta=table2_theta, n_groups=3, n_treatment_groups=1,
                           periods=1, treatment_start=1, seed=0)
        panels = sg.simulate_panel(cfg)
        assert all(p.periods == 1 for p in panels)

    def test_experiment_dimensions(self, table2_theta):
        cfg = sg.SimConfig(theta=table2_theta, seed=1)
        panels = sg.simulate_panel(cfg)
        assert len(panels) == 46
        assert sum(p.is_treatment for p in panels) == 28
        assert all(p.periods == 30 and p.n == 4 for p in panels)
        assert {p.regime(15) for p in panels[:28]} == {sg.Regime.BASELINE}
        assert {p.regime(16) for p in panels[:28]} == {sg.Regime.TREATMENT}
        assert {p.regime(30) for p in panels[28:]} == {sg.Regime.BASELINE}

    def test_seed_determinism_bit_identical(self, table2_theta):
        cfg = sg.SimConfig(theta=table2_theta, n_groups=5, n_treatment_groups=3,
                           periods=6, treatment_start=4, seed=42)
        a = sg.simulate_panel(cfg)
        b = sg.simulate_panel(cfg)
        for pa, pb in zip(a, b):
            for (na, ca), (nb, cb) in zip(pa.states, pb.states):
                assert np.array_equal(na.adj, nb.adj)
                assert np.array_equal(ca.c, cb.c)

    def test_empty_initial_rule(self, table2_theta):
        cfg = sg.SimConfig(theta=table2_theta, n_groups=2, n_treatment_groups=0,
                           periods=3, treatment_start=0, seed=0,
                           initial_rule="empty")
        panels = sg.simulate_panel(cfg)
        for p in panels:
            net, c = p.state(1)
            assert net.out_degrees().sum() == 0 and c.c.sum() == 0

    def test_mutual_links_more_frequent_under_treatment(self, table2_theta):
        # positive direct-reciprocity weight should raise reciprocation in
        # post-intervention periods relative to never-treated groups
        cfg = sg.SimConfig(theta=table2_theta, seed=8)
        panels = sg.simulate_panel(cfg)

        def mutual_rate(subset):
            total, mutual = 0, 0
            for p in subset:
                for net, _ in p.states[15:]:
                    off = ~np.eye(4, dtype=bool)
                    mutual += (net.adj * net.adj.T)[off].sum()
                    total += off.sum()
            return mutual / total

        treated = [p for p in panels if p.is_treatment]
        control = [p for p in panels if not p.is_treatment]
        assert mutual_rate(treated) > mutual_rate(control)

    def test_revision_rule_in_config(self, table2_theta):
        cfg = sg.SimConfig(theta=table2_theta, n_groups=1, n_treatment_groups=0,
                           periods=5, treatment_start=0, seed=3, revision=(0,),
                           initial_rule="empty")
        panel = sg.simulate_panel(cfg)[0]
        for t in range(2, 6):
            net, c = panel.state(t)
            for i in (1, 2, 3):
                assert net.out_degrees()[i] == 0 and c.c[i] == 0.0

    def test_config_validation(self, table2_theta):
        with pytest.raises(ConfigurationError):
            sg.SimConfig(theta=table2_theta, n_groups=2, n_treatment_groups=3)
        with pytest.raises(ConfigurationError):
            sg.SimConfig(theta=table2_theta, periods=5, treatment_start=7)

    def test_heterogeneous_simulation_carries_covariates(self, table2_theta):
        zeros = np.zeros(3)
        theta = sg.ThetaParams(*table2_theta.flat(), het_cost=zeros,
                               het_treat_dir=zeros, het_gen=zeros,
                               het_treat_gen=zeros)
        cfg = sg.SimConfig(theta=theta, n_groups=3, n_treatment_groups=2,
                           periods=4, treatment_start=3, seed=0,
                           covariate_rule="standard_normal")
        panels = sg.simulate_panel(cfg)
        assert all(p.covariates is not None and len(p.covariates) == 4
                   for p in panels)
        with pytest.raises(ConfigurationError):
            _player_coefficients(theta, 4, None)


class TestGroupPanel:
    def test_regime_boundaries(self, table2_theta, spec16):
        net, c = _dyad_state()
        states = tuple((net, c) for _ in range(4))
        panel = sg.GroupPanel("x", 3, states)
        assert panel.regime(2) is sg.Regime.BASELINE
        assert panel.regime(3) is sg.Regime.TREATMENT
        baseline = sg.GroupPanel("y", 0, states)
        assert baseline.regime(4) is sg.Regime.BASELINE
        with pytest.raises(DomainError):
            sg.GroupPanel("z", 6, states)

    def test_build_info_sets_uses_lag(self, spec16):
        first = state_from_edges([(0, 1), (1, 0)], [1, 1, 0, 0])
        second = state_from_edges([], [0, 0, 0, 0])
        panel = sg.GroupPanel("g", 0, (first, second))
        infos = build_info_sets(panel, 2, spec16)
        assert infos[0].incoming_total == pytest.approx(0.8, abs=1e-12)
        with pytest.raises(DomainError):
            build_info_sets(panel, 1, spec16)
