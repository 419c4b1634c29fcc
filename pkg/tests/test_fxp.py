import math

import numpy as np
import pytest

from utils.fxp import (
    FixedFormat,
    FixedMatrix,
    FixedValue,
    FixedVector,
    Overflow,
    Rounding,
    SaturationLog,
    StageSchedule,
    default_schedule,
    dot_exact,
    exact_sub,
    fx_add,
    fx_mul,
    fx_sub,
    int_bits_for,
    quantize,
    requantize,
    same_resolution,
    tree_levels,
    tree_matvec,
    vec_add,
    vec_clip,
    vec_scale,
)
from utils.mpc_exceptions import FixedPointFormatError, QuantizationError, SolverError

Q8 = FixedFormat(8, 2)


def test_format_properties():
    assert Q8.frac_bits == 6
    assert Q8.ulp == 1 / 64
    assert Q8.raw_min == -128
    assert Q8.raw_max == 127
    assert Q8.min_value == -2.0
    assert Q8.max_value == 127 / 64
    assert str(Q8) == "fx<8,2>"


def test_negative_integer_bits():
    fmt = FixedFormat(27, -1)
    assert fmt.frac_bits == 28
    assert fmt.max_value < 0.25


@pytest.mark.parametrize("width,int_bits", [(1, 0), (129, 2), (8, 9)])
def test_invalid_formats(width, int_bits):
    with pytest.raises(FixedPointFormatError):
        FixedFormat(width, int_bits)


def test_format_dict_accepts_strings():
    fmt = FixedFormat.from_dict({"width": 16, "int_bits": 3, "rounding": "truncate"})
    assert fmt.rounding == Rounding.TRUNCATE
    assert fmt.overflow == Overflow.SATURATE
    assert FixedFormat.from_dict(fmt.to_dict()) == fmt

    with pytest.raises(FixedPointFormatError):
        FixedFormat.from_dict({"width": 16})


def test_quantize_rounds_to_nearest():
    assert quantize(0.3, Q8).raw == 19
    assert quantize(0.3, Q8).value == 19 / 64
    assert abs(quantize(0.3, Q8).value - 0.3) <= Q8.ulp / 2


def test_quantize_half_rounds_up():
    assert quantize(0.5 / 64, Q8).raw == 1
    assert quantize(-0.5 / 64, Q8).raw == 0
    assert quantize(-1.5 / 64, Q8).raw == -1


def test_quantize_saturates():
    assert quantize(1e9, Q8).raw == Q8.raw_max
    assert quantize(-1e9, Q8).raw == Q8.raw_min
    assert quantize(2.0, Q8).value == Q8.max_value


def test_quantize_truncate():
    fmt = FixedFormat(8, 2, Rounding.TRUNCATE)
    assert quantize(0.3, fmt).raw == 19
    assert quantize(-0.3, fmt).raw == -20


def test_quantize_wrap():
    fmt = FixedFormat(8, 2, overflow=Overflow.WRAP)
    assert quantize(2.0, fmt).raw == -128


def test_quantize_rejects_non_finite():
    with pytest.raises(QuantizationError):
        quantize(math.nan, Q8)
    with pytest.raises(QuantizationError):
        FixedVector.from_real([0.0, math.inf], Q8)


def test_fixed_value_range_checked():
    with pytest.raises(FixedPointFormatError):
        FixedValue(128, Q8)


def test_scalar_arithmetic():
    a, b = quantize(1.5, Q8), quantize(0.75, Q8)

    assert fx_add(a, b, Q8).raw == Q8.raw_max
    assert fx_add(a, b, FixedFormat(8, 3)).value == 2.25
    assert fx_sub(b, a, Q8).value == -0.75
    assert fx_mul(quantize(0.5, Q8), quantize(0.5, Q8), Q8).value == 0.25


def test_mixed_format_add_aligns_binary_points():
    a = quantize(0.5, FixedFormat(8, 2))
    b = quantize(0.125, FixedFormat(12, 2))
    assert fx_add(a, b, FixedFormat(12, 2)).value == 0.625


def test_saturation_log_counts_sites():
    log = SaturationLog()
    FixedVector.from_real([0.0, 5.0, -5.0], Q8, log, "bounds")
    vec_add(
        FixedVector.from_real([1.5], Q8), FixedVector.from_real([1.5], Q8), Q8, log, "sum"
    )

    assert log.events == 3
    assert log.by_site == {"bounds": 2, "sum": 1}


def test_vector_operations():
    a = FixedVector.from_real([0.5, -0.25, 1.0], Q8)
    b = FixedVector.from_real([0.25, 0.25, -1.0], Q8)

    np.testing.assert_array_equal(vec_add(a, b, Q8).values(), [0.75, 0.0, 0.0])
    np.testing.assert_array_equal(exact_sub(a, b).values(), [0.25, -0.5, 2.0])

    half = quantize(0.5, Q8)
    np.testing.assert_array_equal(vec_scale(half, a, Q8).values(), [0.25, -0.125, 0.5])


def test_requantize_changes_resolution():
    v = FixedVector.from_real([0.3], FixedFormat(16, 2))
    coarse = requantize(v, Q8)
    assert coarse.format == Q8
    assert abs(coarse.values()[0] - 0.3) <= Q8.ulp


def test_vec_clip_requires_iterate_format():
    v = FixedVector.from_real([-1.5, 0.2, 1.5], Q8)
    lo = FixedVector.from_real([-1.0] * 3, Q8)
    hi = FixedVector.from_real([1.0] * 3, Q8)
    clipped = vec_clip(v, lo, hi).values()
    np.testing.assert_array_equal(clipped, [-1.0, quantize(0.2, Q8).value, 1.0])

    with pytest.raises(SolverError):
        vec_clip(v, FixedVector.from_real([-1.0] * 3, FixedFormat(16, 2)), hi)


def test_dot_exact():
    a = FixedVector.from_real([0.5, 0.25], Q8)
    b = FixedVector.from_real([0.5, 0.5], Q8)
    out = FixedFormat(16, 4)
    assert dot_exact(a, b, out).value == 0.375

    with pytest.raises(SolverError):
        dot_exact(a, FixedVector.from_real([1.0], Q8), out)


def test_int_bits_for():
    assert int_bits_for(1.5, 27) == 2
    assert int_bits_for(0.1, 27) == -2
    assert FixedFormat(27, int_bits_for(100.0, 27)).max_value >= 100.0

    with pytest.raises(FixedPointFormatError):
        int_bits_for(math.inf, 27)


def test_same_resolution_keeps_ulp():
    base = FixedFormat(27, 2)
    wider = same_resolution(base, 10.0)
    assert wider.ulp == base.ulp
    assert wider.max_value >= 10.0
    assert same_resolution(base, 1.0) == base


@pytest.mark.parametrize("n,levels", [(1, 0), (2, 1), (3, 2), (8, 3), (81, 7)])
def test_tree_levels(n, levels):
    assert tree_levels(n) == levels


def test_default_schedule_growth():
    h, v = FixedFormat(27, -1), FixedFormat(27, 2)
    schedule = default_schedule(h, v, 81)

    assert schedule.product == FixedFormat(35, 1)
    assert len(schedule.stages) == 6
    assert schedule.stages[0] == FixedFormat(36, 2)
    assert schedule.stages[-1] == FixedFormat(41, 7)
    assert schedule.result == v


@pytest.mark.parametrize("n", [1, 2, 5, 8, 13])
def test_tree_matvec_rounds_once(n):
    rng = np.random.default_rng(n)
    fmt = FixedFormat(16, 2)
    H = FixedMatrix.from_real(rng.uniform(-0.3, 0.3, (4, n)) / max(1, n / 4), fmt)
    v = FixedVector.from_real(rng.uniform(-1.0, 1.0, n), fmt)

    result = tree_matvec(H, v)
    exact = H.values() @ v.values()

    assert result.format == fmt
    assert np.all(np.abs(result.values() - exact) <= fmt.ulp / 2 + 1e-15)


COARSE = FixedFormat(12, 11)
COARSE_SCHEDULE = StageSchedule(FixedFormat(16, 8), (COARSE,) * 3, COARSE)


def round_shift(raw: int, k: int) -> int:
    return (raw + (1 << (k - 1))) >> k if k else raw


def pairwise_reference(products: list[int], shift: int) -> int:
    # element j pairs with j + ceil(n/2); an odd leftover goes to the tail
    level, k = list(products), shift
    while len(level) > 1:
        half, pairs = (len(level) + 1) // 2, len(level) // 2
        nxt = [level[j] + level[half + j] for j in range(pairs)]
        if len(level) % 2:
            nxt.append(level[half - 1])
        level, k = [round_shift(r, k) for r in nxt], 0
    return level[0]


def left_fold_reference(products: list[int], shift: int) -> int:
    acc = products[0]
    for j, p in enumerate(products[1:]):
        acc = round_shift((acc << shift if j else acc) + p, shift)
    return acc


def test_tree_matvec_follows_pairing_order_with_lossy_stages():
    fmt = FixedFormat(8, 4)
    H = FixedMatrix.from_real([[0.25, 0.25, 0.0, 0.0, 0.0]], fmt)
    v = FixedVector.from_real(np.ones(5), fmt)
    products = [int(h) * int(x) for h, x in zip(H.raw[0], v.raw)]

    result = tree_matvec(H, v, COARSE_SCHEDULE)

    # (0.25 + 0) and (0.25 + 0) each round up to 0.5 before meeting
    assert result.format == COARSE
    assert result.values()[0] == 1.0
    assert result.raw_list()[0] == pairwise_reference(products, 7) == 2
    assert left_fold_reference(products, 7) == 1


def test_tree_matvec_matches_hand_pairing_per_row():
    rng = np.random.default_rng(21)
    fmt = FixedFormat(8, 4)
    H = FixedMatrix.from_real(rng.integers(-32, 32, (6, 13)) / 16.0, fmt)
    v = FixedVector.from_real(rng.integers(-32, 32, 13) / 16.0, fmt)
    log = SaturationLog()

    result = tree_matvec(H, v, COARSE_SCHEDULE, log=log)

    expected = [
        pairwise_reference([int(h) * int(x) for h, x in zip(row, v.raw)], 7) for row in H.raw
    ]
    assert result.raw_list() == expected
    assert log.events == 0


def test_tree_matvec_is_deterministic():
    rng = np.random.default_rng(3)
    H = FixedMatrix.from_real(rng.uniform(-0.1, 0.1, (9, 9)), FixedFormat(27, -1))
    v = FixedVector.from_real(rng.uniform(-1.0, 1.0, 9), FixedFormat(27, 2))

    assert tree_matvec(H, v).raw_list() == tree_matvec(H, v).raw_list()


def test_tree_matvec_saturates_into_log():
    fmt = FixedFormat(8, 2)
    H = FixedMatrix.from_real(np.full((1, 4), 1.5), fmt)
    v = FixedVector.from_real(np.full(4, 1.5), fmt)
    log = SaturationLog()

    result = tree_matvec(H, v, log=log, site="hv")
    assert result.values()[0] == fmt.max_value
    assert log.by_site["hv"] > 0


def test_tree_matvec_dimension_mismatch():
    H = FixedMatrix.from_real(np.zeros((2, 3)), Q8)
    with pytest.raises(SolverError):
        tree_matvec(H, FixedVector.from_real(np.zeros(2), Q8))


def test_wide_formats_use_exact_integers():
    fmt = FixedFormat(64, 14)
    a = FixedVector.from_real([1.0 + 2.0**-40], fmt)
    assert a.raw.dtype == object
    assert a.raw_list()[0] == (1 << 50) + (1 << 10)
