import math

import pytest
from hypothesis import given, strategies as st

from edgemarket.model import (
    BuyerProfile,
    FixedGain,
    LongTermContract,
    ModelError,
    SellerProfile,
    TaskConfig,
    TemporaryContract,
    UniformGain,
    fb_sum_utility,
    fb_utility,
    seller_futures_utility,
    seller_unit_cost,
    spot_utilities,
    unit_valuation,
    volunteer_count,
)

SELLER_RATE = 2.5e9


def make_task(w1=1.0, w2=1.0, w3=1.0):
    return TaskConfig(data_size_bits=1.5e6, bandwidth_hz=6e6, w1=w1, w2=w2, w3=w3)


def make_buyer(f=2.5e6, g=0.5, e=0.5, gain=250.0):
    return BuyerProfile(compute_rate=f, tx_power=g, compute_power=e,
                        channel_model=FixedGain(gain))


class TestUnitValuation:
    def test_reference_point(self):
        # frozen from an independent scalar evaluation of the closed forms
        v = unit_valuation(make_buyer(), 250.0, make_task(), SELLER_RATE)
        assert v == pytest.approx(0.8457, abs=1e-3)

    def test_zero_weights_annihilate(self):
        v = unit_valuation(make_buyer(), 250.0, make_task(w1=0, w2=0), SELLER_RATE)
        assert v == 0.0

    def test_no_compute_speedup_gives_negative_time_term(self):
        task = make_task(w1=1, w2=0)
        buyer = make_buyer(f=SELLER_RATE)
        v = unit_valuation(buyer, 250.0, task, SELLER_RATE)
        # time saving collapses to minus the transmission time
        rate = 6e6 * math.log2(1 + 0.5 * 250)
        assert v == pytest.approx(-1.5e6 / rate)
        assert v < 0

    @given(st.floats(min_value=1.0, max_value=1e4),
           st.floats(min_value=1.0, max_value=1e4))
    def test_monotone_in_gain(self, g1, g2):
        lo, hi = sorted((g1, g2))
        task = make_task()
        b = make_buyer()
        assert (unit_valuation(b, lo, task, SELLER_RATE)
                <= unit_valuation(b, hi, task, SELLER_RATE) + 1e-12)


class TestSellerUnitCost:
    def test_reference_point(self):
        seller = SellerProfile(SELLER_RATE, 0.7, 100, hardware_unit_cost=0.01)
        assert seller_unit_cost(seller, make_task()) == pytest.approx(0.01042, abs=1e-5)

    def test_zero_weight_zero_hardware(self):
        seller = SellerProfile(SELLER_RATE, 0.7, 100, hardware_unit_cost=0.0)
        assert seller_unit_cost(seller, make_task(w3=0)) == 0.0

    def test_pure_hardware_cost(self):
        seller = SellerProfile(SELLER_RATE, 0.7, 100, hardware_unit_cost=0.3)
        assert seller_unit_cost(seller, make_task(w3=0)) == 0.3


def contract(n, p=1.0, q=0.5, qt=0.5, buyer_id=0):
    return LongTermContract(buyer_id, n, p, q, qt)


class TestFbUtility:
    def test_over_demand_branch(self):
        assert fb_utility(contract(5), 7, 2.0) == 5.0

    def test_under_demand_branch(self):
        assert fb_utility(contract(5), 3, 2.0) == 2.0

    def test_null_contract(self):
        assert fb_utility(contract(0), 4, 2.0) == 0.0

    @given(st.integers(min_value=0, max_value=50),
           st.floats(min_value=-3, max_value=8),
           st.floats(min_value=0, max_value=5),
           st.floats(min_value=0, max_value=5))
    def test_branches_agree_at_boundary(self, n, v, p, q):
        c = LongTermContract(0, n, p, q, 0.0)
        over = n * (v - p)
        under = n * (v - p) - 0 * q
        assert fb_utility(c, n, v) == pytest.approx(over) == pytest.approx(under)

    @given(st.integers(min_value=1, max_value=30),
           st.floats(min_value=0.1, max_value=9.9),
           st.floats(min_value=0.1, max_value=9.9))
    def test_price_transfer_is_zero_sum_when_over_demand(self, n, p1, p2):
        """For the over-demand branch, buyer + seller utility is price-free."""
        cost, v = 0.3, 4.0
        def both(p):
            c = LongTermContract(0, n, p, 0.5, 0.5)
            return (fb_utility(c, n + 3, v)
                    + seller_futures_utility([(c, n + 3)], 0, cost))
        assert both(p1) == pytest.approx(both(p2))


class TestFbSumUtility:
    def test_no_volunteers_reduces_to_single_utility(self):
        entries = [(contract(5), 3, 2.0, 0)]
        assert fb_sum_utility(entries, 0.5) == fb_utility(contract(5), 3, 2.0)

    def test_volunteer_compensation_and_forfeit(self):
        entries = [(contract(5), 3, 2.0, 1)]
        # base utility 2, compensation 0.5, forfeited branch value -1
        assert fb_sum_utility(entries, 0.5, capacity=2) == pytest.approx(3.5)

    def test_additive_without_volunteers(self):
        entries = [(contract(5, buyer_id=0), 3, 2.0, 0),
                   (contract(4, buyer_id=1), 6, 1.5, 0)]
        expected = fb_utility(contract(5), 3, 2.0) + fb_utility(contract(4), 6, 1.5)
        assert fb_sum_utility(entries, 0.5) == pytest.approx(expected)

    def test_rejects_inconsistent_volunteer_total(self):
        entries = [(contract(5), 3, 2.0, 1)]
        with pytest.raises(ModelError):
            fb_sum_utility(entries, 0.5, capacity=10)

    def test_rejects_volunteers_beyond_committed(self):
        entries = [(contract(5), 3, 2.0, 4)]
        with pytest.raises(ModelError):
            fb_sum_utility(entries, 0.5)


class TestSellerFuturesUtility:
    def test_over_demand_no_volunteers(self):
        assert seller_futures_utility([(contract(5, p=1.0), 7)], 0, 0.4) == pytest.approx(3.0)

    def test_volunteer_cost(self):
        c = contract(5, p=1.0, q=0.3, qt=0.5)
        assert seller_futures_utility([(c, 7)], 1, 0.4) == pytest.approx(1.6)

    def test_exact_use_pays_no_penalty(self):
        assert seller_futures_utility([(contract(5, p=1.0), 5)], 0, 0.4) == 0.0

    @given(st.integers(min_value=0, max_value=4))
    def test_linear_in_volunteers(self, v):
        c = contract(6, p=2.0, q=0.3, qt=0.7)
        base = seller_futures_utility([(c, 9)], 0, 0.4)
        got = seller_futures_utility([(c, 9)], v, 0.4)
        slope = c.seller_penalty + (c.price - 0.4) + c.buyer_penalty
        assert got == pytest.approx(base - v * slope)


class TestSpotUtilities:
    def test_reference_point(self):
        buyers, seller = spot_utilities([TemporaryContract(0, 3, 2.0)], [3.0], 1.0)
        assert buyers == pytest.approx(3.0)
        assert seller == pytest.approx(3.0)

    def test_empty(self):
        assert spot_utilities([], [], 1.0) == (0.0, 0.0)

    def test_zero_margin_buyers(self):
        cs = [TemporaryContract(0, 3, 2.0), TemporaryContract(1, 1, 2.0)]
        buyers, _ = spot_utilities(cs, [2.0, 2.0], 0.5)
        assert buyers == 0.0


class TestVolunteerCount:
    def test_shortage(self):
        assert volunteer_count([3, 2], 3) == 2

    def test_no_shortage(self):
        assert volunteer_count([1, 1], 3) == 0


class TestValidation:
    def test_task_requires_positive_fields(self):
        with pytest.raises(ModelError):
            TaskConfig(data_size_bits=0, bandwidth_hz=6e6)

    def test_uniform_gain_ordering(self):
        with pytest.raises(ModelError):
            UniformGain(5.0, 1.0)

    def test_contract_rejects_negative_quantity(self):
        with pytest.raises(ModelError):
            LongTermContract(0, -1, 1.0, 0.0, 0.0)

    def test_null_contract_flag(self):
        assert contract(0).is_null and not contract(3).is_null
