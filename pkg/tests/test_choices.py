import numpy as np
import pytest

import sharegame as sg
from sharegame.choices import choice_distribution, link_index, link_table
from sharegame.errors import NumericError

from oracles import choice_probabilities_oracle


def test_zero_theta_is_uniform():
    info = sg.InfoSet(sg.Regime.BASELINE, 0.7)
    dist = choice_distribution(info, 0, sg.ThetaParams(), sg.MpcrSpec.purely_congestive(1.6),
                               n=4, q=21)
    assert dist.probs.shape == (8, 21)
    assert np.allclose(dist.probs, 1 / 168, atol=1e-15)


def test_extreme_cost_weight_puts_mass_on_zero_contribution(spec16):
    info = sg.InfoSet(sg.Regime.BASELINE, 0.0)
    theta = sg.ThetaParams(1e6, 0.0, 0.0, 0.0)
    dist = choice_distribution(info, 0, theta, spec16, n=4, q=21)
    mass_on_zero = dist.probs[:, 0].sum() + dist.probs[0, 1:].sum()
    assert mass_on_zero > 1 - 1e-9


def test_argmax_with_no_history_is_empty_and_zero(table2_theta, spec16):
    info = sg.InfoSet(sg.Regime.BASELINE, 0.0)
    dist = choice_distribution(info, 0, table2_theta, spec16, n=4, q=21)
    links, c = dist.argmax()
    assert list(links) == [0, 0, 0] and c == 0.0


def test_normalization_over_random_infos(table2_theta, spec16):
    rng = np.random.default_rng(5)
    for _ in range(50):
        v = rng.random(3) * 2
        info = sg.InfoSet(sg.Regime.TREATMENT, float(v.sum()), v)
        dist = choice_distribution(info, 1, table2_theta, spec16, n=4, q=21)
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert (dist.probs >= 0).all()


def test_matches_scalar_potential_oracle(table2_theta, spec16):
    rng = np.random.default_rng(11)
    for n, q in ((2, 3), (3, 5), (4, 7)):
        v = rng.random(n - 1)
        info = sg.InfoSet(sg.Regime.TREATMENT, float(v.sum()), v)
        dist = choice_distribution(info, 1, table2_theta, spec16, n=n, q=q)
        oracle = choice_probabilities_oracle(info, 1, table2_theta, spec16, n, q)
        assert np.allclose(dist.probs, oracle, atol=1e-12)


def test_prob_of_and_sampling(table2_theta, spec16):
    info = sg.InfoSet(sg.Regime.BASELINE, 1.2)
    dist = choice_distribution(info, 0, table2_theta, spec16, n=4, q=21)
    assert dist.prob_of([1, 0, 0], 0.5) == pytest.approx(
        float(dist.probs[link_index([1, 0, 0]), 10]), abs=0)
    rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
    assert dist.sample(rng1)[1] == dist.sample(rng2)[1]


def test_non_finite_potential_raises():
    spec = sg.MpcrSpec.purely_congestive(1.6)
    theta = sg.ThetaParams(0.0, 50.0, 0.0, 0.0)
    info = sg.InfoSet(sg.Regime.BASELINE, 1e308)
    with pytest.raises(NumericError):
        choice_distribution(info, 0, theta, spec, n=4, q=21)


def test_link_table_bit_convention():
    matrix, degrees = link_table(3)
    assert matrix.shape == (8, 3)
    assert list(matrix[5]) == [1, 0, 1]  # bits 0 and 2
    assert degrees[5] == 2
    assert link_index([1, 0, 1]) == 5
