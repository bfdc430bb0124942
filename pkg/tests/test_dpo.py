import math
import random

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rankcot.dpo import (
    DpoInputs,
    dpo_grad_check,
    dpo_loss,
    mean_loss,
    pair_preference_rate,
    read_dpo_csv,
    softplus,
)
from rankcot.errors import InputError

mpmath.mp.dps = 50


def mp_softplus(x) -> float:
    return float(mpmath.log(1 + mpmath.exp(mpmath.mpf(x))))


def with_deltas(d_chosen, d_rejected, beta=0.1):
    return DpoInputs(-10.0 + d_chosen, -10.0, -20.0 + d_rejected, -20.0, beta)


def test_zero_margin_is_ln2():
    res = dpo_loss(DpoInputs(-5.0, -5.0, -7.0, -7.0))
    assert res.margin == 0.0
    assert abs(res.loss - math.log(2)) <= 1e-12


def test_worked_margin():
    res = dpo_loss(with_deltas(2.0, -1.0, beta=0.1))
    assert res.margin == pytest.approx(0.3, abs=1e-15)
    assert res.loss == pytest.approx(mp_softplus(-0.3), rel=1e-14)


def test_large_negative_margin_is_stable():
    inputs = DpoInputs(0.0, 0.0, 0.0, -8000.0, beta=0.1)
    res = dpo_loss(inputs)
    assert res.margin == pytest.approx(-800.0)
    assert math.isfinite(res.loss)
    assert res.loss == pytest.approx(800.0, rel=1e-15)


@pytest.mark.parametrize("x", [-700.0, -50.0, -1e-8, 0.0, 1e-8, 3.0, 36.0, 700.0])
def test_softplus_matches_high_precision(x):
    assert softplus(x) == pytest.approx(mp_softplus(x), rel=1e-14)


def test_grad_at_zero_margin():
    res = dpo_loss(DpoInputs(-1.0, -1.0, -2.0, -2.0, beta=0.3))
    assert res.grad[0] == -0.3 / 2
    assert res.grad[2] == 0.3 / 2
    assert res.grad[1] == 0.0 and res.grad[3] == 0.0


def test_grad_scales_with_beta_at_zero_margin():
    a = dpo_loss(DpoInputs(-1.0, -1.0, -2.0, -2.0, beta=0.2)).grad
    b = dpo_loss(DpoInputs(-1.0, -1.0, -2.0, -2.0, beta=0.4)).grad
    assert b[0] == 2 * a[0] and b[2] == 2 * a[2]


def test_grad_check_randomized():
    rng = random.Random(0)
    worst = 0.0
    for _ in range(200):
        inputs = DpoInputs(*(rng.uniform(-80, 0) for _ in range(4)), beta=rng.uniform(0.01, 1.0))
        worst = max(worst, dpo_grad_check(inputs, 1e-6))
    assert worst <= 1e-6


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        dpo_grad_check(DpoInputs(0, 0, 0, 0), eps=1e-2)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        DpoInputs(bad, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("beta", [0.0, -0.1, math.inf])
def test_beta_must_be_positive(beta):
    with pytest.raises(ValueError):
        DpoInputs(0.0, 0.0, 0.0, 0.0, beta)


logp = st.floats(-100, 0, allow_nan=False)


@given(logp, logp, logp, logp, st.floats(0.01, 2.0), st.floats(0.01, 5.0))
def test_monotone_in_policy_logps(pc, rc, pr, rr, beta, step):
    base = dpo_loss(DpoInputs(pc, rc, pr, rr, beta))
    up_chosen = dpo_loss(DpoInputs(pc + step, rc, pr, rr, beta))
    up_rejected = dpo_loss(DpoInputs(pc, rc, pr + step, rr, beta))
    assert up_chosen.loss <= base.loss <= up_rejected.loss
    assert base.grad[0] <= 0.0 <= base.grad[2]


@given(logp, logp, logp, logp, st.floats(-50, 50), st.floats(0.01, 2.0))
def test_ratio_invariance(pc, rc, pr, rr, c, beta):
    a = dpo_loss(DpoInputs(pc, rc, pr, rr, beta)).loss
    b = dpo_loss(DpoInputs(pc + c, rc + c, pr, rr, beta)).loss
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@given(logp, logp, logp, logp, st.floats(0.01, 2.0))
def test_loss_non_negative(pc, rc, pr, rr, beta):
    assert dpo_loss(DpoInputs(pc, rc, pr, rr, beta)).loss >= 0.0


def test_loss_vanishes_for_large_margin():
    assert dpo_loss(with_deltas(1000.0, 0.0, beta=1.0)).loss < 1e-300


def test_strict_monotonicity_on_ordered_inputs():
    losses = [dpo_loss(with_deltas(d, 0.0)).loss for d in range(-20, 21)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


class TestPreferenceRate:
    def test_all_positive(self):
        assert pair_preference_rate([with_deltas(1, 0), with_deltas(3, 1)]) == 1.0

    def test_half(self):
        assert pair_preference_rate([with_deltas(10, 0), with_deltas(0, 10)]) == 0.5

    def test_zero_margin_not_preferred(self):
        assert pair_preference_rate([with_deltas(0, 0)]) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            pair_preference_rate([])

    def test_symmetric_random_inputs_within_binomial_bounds(self):
        rng = random.Random(42)
        n = 1000
        pairs = [DpoInputs(*(rng.gauss(-10, 3) for _ in range(4))) for _ in range(n)]
        rate = pair_preference_rate(pairs)
        sigma = math.sqrt(0.25 / n)
        assert abs(rate - 0.5) <= 3 * sigma


def test_mean_loss():
    pairs = [with_deltas(0, 0), with_deltas(0, 0)]
    assert mean_loss(pairs) == pytest.approx(math.log(2))


def test_csv_intake(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(
        "logp_policy_chosen,logp_ref_chosen,logp_policy_rejected,logp_ref_rejected,beta\n"
        "-1,-1,-2,-2,\n"
        "-1,-3,-2,-2,0.5\n"
    )
    rows = read_dpo_csv(path)
    assert rows[0].beta == 0.1 and rows[1].beta == 0.5
    assert dpo_loss(rows[1]).margin == pytest.approx(1.0)


def test_csv_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("logp_policy_chosen,logp_ref_chosen\n1,2\n")
    with pytest.raises(InputError, match="missing columns"):
        read_dpo_csv(path)
