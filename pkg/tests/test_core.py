"""Tests for the core table, fixed point, and combinatorics.

The independent oracles live at the top of the file and are deliberately
written from the defining formulas (truncated product, fixed-point map,
Pascal triangle) rather than from the implementation they check.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaindrift.core import (
    BracketError,
    DegreeConfig,
    DomainError,
    GridParams,
    QHat,
    SeriesCoeffs,
    WTable,
    all_configs,
    binom,
    bisect_root,
    build_wtable,
    config_prob,
    end_correction,
    nontermination_map,
    noperm,
    solve_qhat,
    wtilde,
)

# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def product_oracle(p: float) -> float:
    """Truncated direct product for the table value 4*w(p).

    4 * p/(1-p) * prod_{i=0}^{11} 4*(((16^(i+1)-1)/5) + p) / (((4*16^(i+1)+1)/5) - p),
    evaluated term by term with no series shortcut.
    """
    acc = 4.0 * p / (1.0 - p)
    for i in range(12):
        b = 16.0 ** (i + 1)
        acc *= 4.0 * ((b - 1.0) / 5.0 + p) / ((4.0 * b + 1.0) / 5.0 - p)
    return acc


def fixed_point_oracle(n_iter: int = 200) -> float:
    """Iterate q -> (1-(1-q/2)^9)^4 from q0 = 1; converges from above."""
    q = 1.0
    for _ in range(n_iter):
        q = (1.0 - (1.0 - q / 2.0) ** 9) ** 4
    return q


def pascal_oracle(n: int, k: int) -> int:
    """Binomial coefficient built row by row."""
    row = [1]
    for _ in range(n):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    return row[k]


# --------------------------------------------------------------------------
# wtilde
# --------------------------------------------------------------------------

def test_wtilde_at_zero_is_one():
    assert wtilde(0.0) == 1.0


def test_wtilde_vanishes_at_left_endpoint():
    assert wtilde(-0.2) == 0.0


def test_wtilde_domain_errors():
    with pytest.raises(DomainError):
        wtilde(-0.2000001)
    with pytest.raises(DomainError):
        wtilde(0.8)


def test_wtilde_matches_truncated_product_on_grid():
    # 100-point grid across the whole argument range; relative error < 1e-6.
    for t in np.linspace(-0.19, 0.79, 100):
        p = t + 0.2
        ref = product_oracle(p)
        got = wtilde(float(t))
        assert got == pytest.approx(ref, rel=1e-6), f"t={t}"


def test_wtilde_spot_value_against_product():
    assert wtilde(0.3) == pytest.approx(product_oracle(0.5), rel=1e-6)


@given(st.floats(min_value=-0.1999, max_value=0.7999))
def test_wtilde_positive_inside_domain(t):
    assert wtilde(t) > 0.0


def test_series_coeffs_closed_forms():
    c = SeriesCoeffs()
    assert c.c0 == 1.0
    assert c.c1 == 5.0 / 3072.0
    assert c.c2 == 100.0 / (9.0 * 17.0 * 16.0 ** 5)
    assert c.c3 == 125.0 / 2.0 ** 42


# --------------------------------------------------------------------------
# end_correction
# --------------------------------------------------------------------------

def test_end_correction_identity_region():
    assert end_correction(0.2) == 1.0
    assert end_correction(0.5) == 1.0
    assert end_correction(0.35) == 1.0


def test_end_correction_low_end_closed_form():
    expected = math.exp(-(20.0 / 27.0) * (0.1 ** 3))
    assert end_correction(0.1) == pytest.approx(expected, rel=1e-14)
    assert end_correction(0.1) == pytest.approx(0.99925963, abs=1e-6)


def test_end_correction_high_end_closed_form():
    expected = math.exp(-0.25 * (0.7 - 0.5) ** 3)
    assert end_correction(0.7) == pytest.approx(expected, rel=1e-14)


def test_end_correction_never_exceeds_one():
    for p in np.linspace(0.001, 0.999, 997):
        assert end_correction(float(p)) <= 1.0


def test_end_correction_domain():
    with pytest.raises(DomainError):
        end_correction(0.0)
    with pytest.raises(DomainError):
        end_correction(1.0)


# --------------------------------------------------------------------------
# Table construction
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def table20k():
    return build_wtable(GridParams(20000))


def test_table_fixed_point_row(table20k):
    # p = 0.2 is the exact fixed point of the uncorrected function.
    assert table20k.values[4000] == 1.0


def test_table_matches_scalar_api_exactly(table20k):
    # correction gate is strict, so row 10000 (p = 0.5) is bare wtilde
    assert table20k.values[10000] == wtilde(0.3)
    # frozen regression anchors
    assert table20k.values[10000] == pytest.approx(4.515064434097222, abs=1e-14)
    assert table20k.values[3999] == pytest.approx(0.9996666928087049, abs=1e-14)


def test_table_gating_matches_row_indices(table20k):
    # rows just inside/outside the corrected ranges
    for m in (3998, 3999, 4000, 4001, 9999, 10000, 10001, 10002):
        p = m / 20000
        assert table20k.values[m] == wtilde(p - 0.2) * end_correction(p)
    assert end_correction(3999 / 20000) < 1.0
    assert end_correction(4000 / 20000) == 1.0
    assert end_correction(10000 / 20000) == 1.0
    assert end_correction(10001 / 20000) < 1.0


def test_table_strictly_increasing(table20k):
    diffs = np.diff(table20k.values[1:])
    assert np.all(diffs > 0.0)


def test_table_row_zero_is_tripwire_nan(table20k):
    assert math.isnan(table20k.values[0])


def test_lookup_clamps_and_sentinels(table20k):
    assert table20k.lookup(1.0) == 1e10
    assert table20k.lookup(2.5) == 1e10
    assert table20k.lookup(0.0) == table20k.values[1]
    assert table20k.lookup(1e-9) == table20k.values[1]
    assert table20k.lookup(0.99999999) == table20k.values[19999]
    assert table20k.lookup(0.5) == table20k.values[10000]
    assert table20k.lookup(0.50004) == table20k.values[10000]


def test_table_shape_validation():
    with pytest.raises(DomainError):
        WTable(values=np.ones(7), grid=GridParams(9))


def test_grid_params():
    g = GridParams(2000)
    assert g.min_index == 1
    assert g.max_index == 1999
    assert g.weight_of(400) == 0.2
    with pytest.raises(DomainError):
        GridParams(1)


def test_small_grid_table_builds():
    t = build_wtable(GridParams(500))
    assert t.values.shape == (500,)
    assert np.all(np.diff(t.values[1:]) > 0.0)


# --------------------------------------------------------------------------
# Fixed point
# --------------------------------------------------------------------------

def test_solve_qhat_against_iteration_oracle():
    qhat = solve_qhat(1e-11)
    assert qhat.value == pytest.approx(fixed_point_oracle(200), abs=1e-9)


def test_solve_qhat_published_digits():
    assert solve_qhat(1e-11).value == pytest.approx(0.991603, abs=1e-5)


def test_solve_qhat_residual():
    assert solve_qhat(1e-11).residual < 1e-9


def test_fixed_point_iteration_monotone_from_above():
    q = 1.0
    seen = [q]
    for _ in range(60):
        q = nontermination_map(q)
        seen.append(q)
    assert all(a >= b for a, b in zip(seen, seen[1:]))
    assert seen[-1] > 0.99


def test_solve_qhat_accuracy_domain():
    with pytest.raises(DomainError):
        solve_qhat(0.0)
    with pytest.raises(DomainError):
        solve_qhat(1e-5)


def test_qhat_range_validation():
    with pytest.raises(DomainError):
        QHat(0.5)
    with pytest.raises(DomainError):
        QHat(1.0)
    assert float(QHat(0.9916)) == 0.9916


# --------------------------------------------------------------------------
# bisect_root
# --------------------------------------------------------------------------

def test_bisect_root_reciprocal():
    x = bisect_root(lambda v: 1.0 / v, 2.0, 1e-12, 1.0, 1e-11)
    assert x == pytest.approx(0.5, abs=1e-11)


def test_bisect_root_affine():
    x = bisect_root(lambda v: 1.0 - v, 0.25, 0.0, 1.0, 1e-11)
    assert x == pytest.approx(0.75, abs=1e-11)


@given(st.floats(min_value=0.05, max_value=0.95),
       st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=200)
def test_bisect_root_recovers_affine_roots(root, slope):
    # f(x) = slope * (root - x) is nonincreasing with f(root) = 0
    x = bisect_root(lambda v: slope * (root - v), 0.0, 0.0, 1.0, 1e-12)
    assert abs(x - root) < 1e-11


def test_bisect_root_float_resolution_exit():
    # bracket that can never reach the requested width: exits at resolution
    x = bisect_root(lambda v: 1.0, 2.0, 0.0, 1e8, 1e-30)
    assert 0.0 < x < 1e8


# --------------------------------------------------------------------------
# Configs
# --------------------------------------------------------------------------

def test_all_configs_count_and_order():
    cfgs = all_configs()
    assert len(cfgs) == 495
    tuples = [c.j for c in cfgs]
    assert tuples == sorted(tuples)
    assert len(set(tuples)) == 495
    assert tuples[0] == (1, 1, 1, 1)
    assert tuples[-1] == (9, 9, 9, 9)


def test_config_validation():
    with pytest.raises(DomainError):
        DegreeConfig((2, 1, 3, 4))
    with pytest.raises(DomainError):
        DegreeConfig((0, 1, 2, 3))
    with pytest.raises(DomainError):
        DegreeConfig((1, 2, 3, 10))
    c = DegreeConfig((1, 2, 3, 4))
    assert list(c) == [1, 2, 3, 4]
    assert c[3] == 4


def test_binom_against_pascal_oracle():
    for n in range(10):
        for k in range(n + 1):
            assert binom(n, k) == pascal_oracle(n, k)


def test_binom_examples_and_domain():
    assert binom(9, 0) == 1
    assert binom(9, 4) == 126
    assert binom(9, 9) == 1
    with pytest.raises(DomainError):
        binom(10, 2)
    with pytest.raises(DomainError):
        binom(5, 6)
    with pytest.raises(DomainError):
        binom(5, -1)


def test_noperm_examples():
    assert noperm(DegreeConfig((1, 1, 1, 1))) == 1
    assert noperm(DegreeConfig((1, 2, 3, 4))) == 24
    assert noperm(DegreeConfig((1, 1, 2, 3))) == 12
    assert noperm(DegreeConfig((2, 2, 3, 3))) == 6
    assert noperm(DegreeConfig((1, 2, 2, 2))) == 4


def test_noperm_sums_to_full_tuple_count():
    # permutation counts over the sorted representatives cover [1,9]^4
    assert sum(noperm(c) for c in all_configs()) == 9 ** 4


def test_config_prob_closed_forms():
    qhat = solve_qhat(1e-11)
    q = qhat.value
    assert config_prob(DegreeConfig((9, 9, 9, 9)), qhat) == pytest.approx(
        (q / 2.0) ** 36, rel=1e-14)
    assert config_prob(DegreeConfig((4, 4, 4, 4)), qhat) == pytest.approx(
        126.0 ** 4 * (q / 2.0) ** 16 * (1.0 - q / 2.0) ** 20, rel=1e-14)


def test_config_prob_normalisation_identity():
    # The permutation-weighted total over sorted configs equals qhat itself.
    qhat = solve_qhat(1e-11)
    total = sum(noperm(c) * config_prob(c, qhat) for c in all_configs())
    assert total == pytest.approx(qhat.value, abs=1e-9)


def test_config_prob_accepts_plain_float():
    c = DegreeConfig((1, 2, 3, 4))
    assert config_prob(c, 0.9916) == pytest.approx(
        config_prob(c, QHat(0.9916)), rel=0)
