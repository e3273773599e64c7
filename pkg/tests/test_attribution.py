import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepfactor.attribution import aggregate_portfolio, aggregate_stock, factor_correlations
from deepfactor.errors import (
    DegenerateAttributionError,
    DimensionMismatchError,
    EmptyInputError,
)
from deepfactor.factors import DESCRIPTOR_NAMES, FACTOR_GROUPS, Descriptor, FactorMap
from deepfactor.lrp import RelevanceVector

from oracles import kendall_tau_b_brute, spearman_brute

FM = FactorMap()


def group_oracle(r):
    """Brute force: walk every cell and add |r| to its descriptor's factor."""
    owner = {d.value: f for f, members in FACTOR_GROUPS.items() for d in members}
    mass = {f: 0.0 for f in FACTOR_GROUPS}
    for cell, v in enumerate(r):
        mass[owner[DESCRIPTOR_NAMES[cell % 16]]] += abs(v)
    total = sum(mass.values())
    return {f: 100 * m / total for f, m in mass.items()}


class TestAggregateStock:
    def test_roe_only(self):
        r = np.zeros(80)
        r[Descriptor.ROE.index::16] = [0.3, -0.1, 0.2, 0.05, -0.4]
        att = aggregate_stock(r, FM, scope="S1")
        assert att.per_factor["Quality"] == 100.0
        assert sum(v for f, v in att.per_factor.items() if f != "Quality") == 0.0
        assert att.scope == "S1"

    def test_uniform_by_group_size(self):
        att = aggregate_stock(np.full(80, -0.7), FM)
        np.testing.assert_allclose(list(att.per_factor.values()), [18.75, 25, 18.75, 25, 12.5],
                                   atol=1e-12)
        assert list(att.per_factor) == ["Risk", "Quality", "Momentum", "Value", "Size"]

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_grouping_oracle(self, seed):
        r = np.random.default_rng(seed).normal(size=80)
        att = aggregate_stock(RelevanceVector(r, float(r.sum()), 0.0), FM)
        expected = group_oracle(r)
        for f in FM.factors:
            assert att.per_factor[f] == pytest.approx(expected[f], abs=1e-12)
        assert abs(sum(att.per_factor.values()) - 100) < 1e-9

    def test_within_factor_permutation(self):
        rng = np.random.default_rng(7)
        r = rng.normal(size=80)
        swapped = r.copy()
        a, b = Descriptor.PSR.index, Descriptor.PBR.index
        swapped[a::16], swapped[b::16] = r[b::16], r[a::16]
        assert aggregate_stock(swapped).per_factor == pytest.approx(aggregate_stock(r).per_factor,
                                                                    abs=1e-12)

    def test_zero_total(self):
        with pytest.raises(DegenerateAttributionError):
            aggregate_stock(np.zeros(80))

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            aggregate_stock(np.ones(79))
        with pytest.raises(DimensionMismatchError):
            aggregate_stock(np.ones(32), n_cells=80)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=80, max_size=80))
    def test_sums_to_hundred(self, values):
        r = np.array(values)
        if not np.abs(r).sum() > 0:
            return
        att = aggregate_stock(r)
        assert abs(sum(att.per_factor.values()) - 100) < 1e-9
        assert min(att.per_factor.values()) >= 0


class TestAggregatePortfolio:
    def test_singleton(self):
        r = np.random.default_rng(1).normal(size=80)
        assert aggregate_portfolio([r]).per_factor == aggregate_stock(r).per_factor

    def test_copies_equal_single(self):
        r = np.random.default_rng(2).normal(size=80)
        assert aggregate_portfolio([r] * 7).per_factor == pytest.approx(
            aggregate_stock(r).per_factor, abs=1e-12)

    def test_cancellation(self):
        r = np.random.default_rng(3).normal(size=80)
        with pytest.raises(DegenerateAttributionError):
            aggregate_portfolio([r, -r])

    def test_mean_then_group(self):
        rs = np.random.default_rng(4).normal(size=(5, 80))
        mean = [sum(rs[k, c] for k in range(5)) / 5 for c in range(80)]
        att = aggregate_portfolio(list(rs))
        expected = group_oracle(mean)
        for f in FM.factors:
            assert att.per_factor[f] == pytest.approx(expected[f], abs=1e-12)
        assert att.scope == "portfolio:Q1"

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            aggregate_portfolio([])


def fixture_20(seed, ties=False):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(20, 16))
    p = rng.normal(size=20)
    if ties:
        D = np.round(D, 0)
        p = np.round(p * 2) / 2
    return p, D


class TestCorrelations:
    def test_identical_and_reversed(self):
        p, D = fixture_20(0)
        D[:, Descriptor.ROE.index] = p
        D[:, Descriptor.CAP.index] = -p
        fc = factor_correlations(p, D)
        assert fc.per_descriptor["ROE"] == pytest.approx((1.0, 1.0))
        assert fc.per_descriptor["CAP"] == pytest.approx((-1.0, -1.0))

    @pytest.mark.parametrize("ties", [False, True])
    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force_oracles(self, seed, ties):
        p, D = fixture_20(seed, ties)
        fc = factor_correlations(p, D)
        for k, name in enumerate(DESCRIPTOR_NAMES):
            if name in fc.excluded:
                continue
            rho, tau = fc.per_descriptor[name]
            assert rho == pytest.approx(spearman_brute(list(D[:, k]), list(p)), abs=1e-12)
            assert tau == pytest.approx(kendall_tau_b_brute(list(D[:, k]), list(p)), abs=1e-12)

    def test_factor_mean_and_bounds(self):
        p, D = fixture_20(5)
        fc = factor_correlations(p, D)
        for f in FM.factors:
            members = [fc.per_descriptor[DESCRIPTOR_NAMES[k]] for k in FM.members(f)]
            for j in (0, 1):
                vals = [m[j] for m in members]
                assert min(vals) <= fc.per_factor[f][j] <= max(vals)
                assert fc.per_factor[f][j] == pytest.approx(sum(vals) / len(vals), abs=1e-15)
                assert -1 <= fc.per_factor[f][j] <= 1

    def test_monotone_invariance(self):
        p, D = fixture_20(6)
        base = factor_correlations(p, D).per_descriptor
        moved = factor_correlations(np.exp(p), np.arctan(D) * 3 + 1).per_descriptor
        for name in DESCRIPTOR_NAMES:
            assert moved[name] == pytest.approx(base[name], abs=1e-12)

    def test_constant_descriptor_excluded(self):
        p, D = fixture_20(7)
        D[:, Descriptor.CAP.index] = 1.0
        fc = factor_correlations(p, D)
        assert fc.excluded == ("CAP",)
        assert fc.per_factor["Size"] == fc.per_descriptor["ILLIQ"]

    def test_too_few_stocks(self):
        with pytest.raises(EmptyInputError):
            factor_correlations([1.0, 2.0], np.ones((2, 16)))

    def test_constant_predictions(self):
        with pytest.raises(DegenerateAttributionError):
            factor_correlations(np.zeros(5), np.random.default_rng(0).normal(size=(5, 16)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            factor_correlations(np.arange(5.0), np.ones((5, 15)))


def test_attribution_outputs(tmp_path):
    att = aggregate_stock(np.full(80, 1.0), scope="S7")
    att.write_csv(tmp_path / "a.csv")
    att.save_json(tmp_path / "a.json")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "factor,percentage"
    assert lines[1] == "Risk,18.75"
    assert '"scope": "S7"' in (tmp_path / "a.json").read_text()
