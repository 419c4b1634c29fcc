"""Bit-exact emulation of signed fixed-point (``ap_fixed``-style) arithmetic.

Raw values are plain integers. Arrays use ``int64`` carriers while every
intermediate fits in 62 bits and fall back to Python integers (``object``
arrays) beyond that, so results never depend on the platform.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from utils.mpc_exceptions import FixedPointFormatError, QuantizationError, SolverError

# Widest format the emulator accepts (intermediate products included)
MAX_WIDTH = 128

# Largest width that still rides on an int64 carrier with headroom for one add
_INT64_WIDTH = 62


class Rounding(StrEnum):
    ROUND_HALF_UP = "round-half-up"
    TRUNCATE = "truncate"


class Overflow(StrEnum):
    SATURATE = "saturate"
    WRAP = "wrap"


@dataclass(frozen=True)
class FixedFormat:
    """Two's-complement format with ``width`` total and ``int_bits`` integer bits.

    ``int_bits`` counts the sign bit and may be zero or negative; the
    resolution is ``2 ** (int_bits - width)``.
    """

    width: int
    int_bits: int
    rounding: Rounding = Rounding.ROUND_HALF_UP
    overflow: Overflow = Overflow.SATURATE

    def __post_init__(self):
        if not isinstance(self.width, int) or not isinstance(self.int_bits, int):
            raise FixedPointFormatError("width and int_bits must be integers")
        if self.width < 2:
            raise FixedPointFormatError(f"width must be >= 2, got {self.width}")
        if self.width > MAX_WIDTH:
            raise FixedPointFormatError(
                f"width {self.width} exceeds the {MAX_WIDTH}-bit carrier ceiling"
            )
        if self.int_bits > self.width:
            raise FixedPointFormatError(
                f"int_bits ({self.int_bits}) must not exceed width ({self.width})"
            )

        # Accept plain strings coming from JSON / config
        object.__setattr__(self, "rounding", Rounding(self.rounding))
        object.__setattr__(self, "overflow", Overflow(self.overflow))

    @property
    def frac_bits(self) -> int:
        return self.width - self.int_bits

    @property
    def ulp(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def raw_min(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def min_value(self) -> float:
        return math.ldexp(float(self.raw_min), -self.frac_bits)

    @property
    def max_value(self) -> float:
        return math.ldexp(float(self.raw_max), -self.frac_bits)

    def with_bits(self, width: int, int_bits: int) -> "FixedFormat":
        return FixedFormat(width, int_bits, self.rounding, self.overflow)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "int_bits": self.int_bits,
            "rounding": str(self.rounding),
            "overflow": str(self.overflow),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FixedFormat":
        try:
            return cls(
                int(data["width"]),
                int(data["int_bits"]),
                Rounding(data.get("rounding", Rounding.ROUND_HALF_UP)),
                Overflow(data.get("overflow", Overflow.SATURATE)),
            )
        except (KeyError, ValueError) as e:
            raise FixedPointFormatError(f"bad format descriptor {data!r}: {e}") from e

    def __str__(self) -> str:
        return f"fx<{self.width},{self.int_bits}>"


def int_bits_for(bound: float, width: int) -> int:
    """Smallest integer-bit count whose range holds ``[-bound, bound]`` at ``width``."""
    if not math.isfinite(bound) or bound < 0:
        raise FixedPointFormatError(f"cannot size a format for bound {bound}")

    int_bits = -width + 2
    while int_bits <= width:
        fmt = FixedFormat(width, int_bits)
        if bound <= fmt.max_value:
            return int_bits
        int_bits += 1

    raise FixedPointFormatError(f"bound {bound} does not fit in {width} bits")


def same_resolution(base: FixedFormat, bound: float) -> FixedFormat:
    """Format with ``base``'s resolution and just enough integer bits for ``bound``."""
    int_bits = base.int_bits
    while FixedFormat(base.frac_bits + int_bits, int_bits).max_value < bound:
        int_bits += 1
    return base.with_bits(base.frac_bits + int_bits, int_bits)


@dataclass
class SaturationLog:
    """Caller-owned counter of overflow events, grouped by call site."""

    events: int = 0
    by_site: dict[str, int] = field(default_factory=dict)

    def record(self, site: str, count: int) -> None:
        if count <= 0:
            return
        self.events += count
        self.by_site[site] = self.by_site.get(site, 0) + count
        logging.debug(f"[FXP] {count} overflow event(s) at {site}")


# ------ Raw carrier helpers ------


def _carrier(raw, width: int) -> np.ndarray:
    if width <= _INT64_WIDTH:
        return np.asarray(raw).astype(np.int64)
    return np.asarray(raw).astype(object)


def _apply_overflow(raw: np.ndarray, fmt: FixedFormat) -> tuple[np.ndarray, int]:
    lo, hi = fmt.raw_min, fmt.raw_max
    over = raw > hi
    under = raw < lo
    count = int(np.count_nonzero(over)) + int(np.count_nonzero(under))

    if count:
        if fmt.overflow == Overflow.SATURATE:
            raw = np.where(over, hi, np.where(under, lo, raw))
        else:
            span = 1 << fmt.width
            raw = np.asarray(raw, dtype=object)
            raw = (raw - lo) % span + lo

    return _carrier(raw, fmt.width), count


def _convert(
    raw: np.ndarray, src: FixedFormat, dst: FixedFormat
) -> tuple[np.ndarray, int]:
    """Re-express raw values of ``src`` in ``dst``: one rounding, one overflow step."""
    shift = dst.frac_bits - src.frac_bits

    if shift >= 0:
        work = _carrier(raw, max(src.width + shift, dst.width))
        if shift:
            work = work << shift
    else:
        k = -shift
        work = _carrier(raw, src.width + 1)
        if dst.rounding == Rounding.ROUND_HALF_UP:
            work = (work + (1 << (k - 1))) >> k
        else:
            work = work >> k

    return _apply_overflow(work, dst)


def _align(raw: np.ndarray, src: FixedFormat, frac_bits: int, width: int) -> np.ndarray:
    work = _carrier(raw, width)
    shift = frac_bits - src.frac_bits
    return work << shift if shift else work


def _sum_format(a: FixedFormat, b: FixedFormat) -> FixedFormat:
    frac = max(a.frac_bits, b.frac_bits)
    int_bits = max(a.int_bits, b.int_bits) + 1
    return FixedFormat(frac + int_bits, int_bits)


def _product_format(a: FixedFormat, b: FixedFormat) -> FixedFormat:
    return FixedFormat(a.width + b.width, a.int_bits + b.int_bits)


def _quantize_raw(x, fmt: FixedFormat) -> tuple[np.ndarray, int]:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise QuantizationError("cannot quantize non-finite values")

    # Anything beyond twice the range saturates anyway; clipping keeps ldexp finite
    limit = math.ldexp(1.0, fmt.int_bits)
    y = np.ldexp(np.clip(x, -limit, limit), fmt.frac_bits)

    floor = np.floor(y)
    if fmt.rounding == Rounding.ROUND_HALF_UP:
        floor = floor + ((y - floor) >= 0.5)

    if fmt.width + 1 <= _INT64_WIDTH:
        raw = floor.astype(np.int64)
    else:
        raw = np.array([int(v) for v in floor.ravel()], dtype=object).reshape(
            floor.shape
        )

    return _apply_overflow(raw, fmt)


def _to_real(raw: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    if raw.dtype == object:
        flat = [math.ldexp(float(r), -fmt.frac_bits) for r in raw.ravel()]
        return np.array(flat, dtype=float).reshape(raw.shape)
    return np.ldexp(raw.astype(float), -fmt.frac_bits)


# ------ Value types ------


@dataclass(frozen=True)
class FixedValue:
    raw: int
    format: FixedFormat

    def __post_init__(self):
        if not (self.format.raw_min <= self.raw <= self.format.raw_max):
            raise FixedPointFormatError(f"raw {self.raw} does not fit {self.format}")

    @property
    def value(self) -> float:
        return math.ldexp(float(self.raw), -self.format.frac_bits)

    def to_dict(self) -> dict:
        return {"raw": int(self.raw), "format": self.format.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "FixedValue":
        return cls(int(data["raw"]), FixedFormat.from_dict(data["format"]))


@dataclass(frozen=True, eq=False)
class FixedVector:
    raw: np.ndarray
    format: FixedFormat

    def __post_init__(self):
        if self.raw.ndim != 1 or self.raw.size == 0:
            raise FixedPointFormatError("a fixed vector must be 1-D and non-empty")

    def __len__(self) -> int:
        return self.raw.shape[0]

    def values(self) -> np.ndarray:
        return _to_real(self.raw, self.format)

    def raw_list(self) -> list[int]:
        return [int(r) for r in self.raw]

    @classmethod
    def from_real(
        cls, x, fmt: FixedFormat, log: SaturationLog | None = None, site: str = "input"
    ) -> "FixedVector":
        raw, n = _quantize_raw(np.ravel(x), fmt)
        if log is not None:
            log.record(site, n)
        return cls(raw, fmt)


@dataclass(frozen=True, eq=False)
class FixedMatrix:
    raw: np.ndarray
    format: FixedFormat

    def __post_init__(self):
        if self.raw.ndim != 2 or 0 in self.raw.shape:
            raise FixedPointFormatError("a fixed matrix must be 2-D with positive dims")

    @property
    def rows(self) -> int:
        return self.raw.shape[0]

    @property
    def cols(self) -> int:
        return self.raw.shape[1]

    def values(self) -> np.ndarray:
        return _to_real(self.raw, self.format)

    @classmethod
    def from_real(
        cls, m, fmt: FixedFormat, log: SaturationLog | None = None, site: str = "matrix"
    ) -> "FixedMatrix":
        raw, n = _quantize_raw(np.atleast_2d(np.asarray(m, dtype=float)), fmt)
        if log is not None:
            log.record(site, n)
        return cls(raw, fmt)


# ------ Scalar operations ------


def quantize(x: float, f: FixedFormat) -> FixedValue:
    """Nearest representable value of ``f`` (round half up, then saturate)."""
    if not math.isfinite(x):
        raise QuantizationError(f"cannot quantize non-finite value {x}")
    raw, _ = _quantize_raw(np.array([x]), f)
    return FixedValue(int(raw[0]), f)


def fx_add(a: FixedValue, b: FixedValue, out: FixedFormat) -> FixedValue:
    full = _sum_format(a.format, b.format)
    ra = _align(np.array([a.raw]), a.format, full.frac_bits, full.width)
    rb = _align(np.array([b.raw]), b.format, full.frac_bits, full.width)
    raw, _ = _convert(ra + rb, full, out)
    return FixedValue(int(raw[0]), out)


def fx_sub(a: FixedValue, b: FixedValue, out: FixedFormat) -> FixedValue:
    full = _sum_format(a.format, b.format)
    ra = _align(np.array([a.raw]), a.format, full.frac_bits, full.width)
    rb = _align(np.array([b.raw]), b.format, full.frac_bits, full.width)
    raw, _ = _convert(ra - rb, full, out)
    return FixedValue(int(raw[0]), out)


def fx_mul(a: FixedValue, b: FixedValue, out: FixedFormat) -> FixedValue:
    full = _product_format(a.format, b.format)
    product = _carrier(np.array([a.raw]), full.width) * _carrier(
        np.array([b.raw]), full.width
    )
    raw, _ = _convert(product, full, out)
    return FixedValue(int(raw[0]), out)


# ------ Vector operations ------


def vec_add(
    a: FixedVector,
    b: FixedVector,
    out: FixedFormat,
    log: SaturationLog | None = None,
    site: str = "add",
) -> FixedVector:
    _check_lengths(a, b)
    full = _sum_format(a.format, b.format)
    summed = _align(a.raw, a.format, full.frac_bits, full.width) + _align(
        b.raw, b.format, full.frac_bits, full.width
    )
    raw, n = _convert(summed, full, out)
    if log is not None:
        log.record(site, n)
    return FixedVector(raw, out)


def vec_sub(
    a: FixedVector,
    b: FixedVector,
    out: FixedFormat,
    log: SaturationLog | None = None,
    site: str = "sub",
) -> FixedVector:
    _check_lengths(a, b)
    full = _sum_format(a.format, b.format)
    diff = _align(a.raw, a.format, full.frac_bits, full.width) - _align(
        b.raw, b.format, full.frac_bits, full.width
    )
    raw, n = _convert(diff, full, out)
    if log is not None:
        log.record(site, n)
    return FixedVector(raw, out)


def exact_sub(a: FixedVector, b: FixedVector) -> FixedVector:
    """Difference in the full-precision sum format (never rounds, never overflows)."""
    full = _sum_format(a.format, b.format)
    return vec_sub(a, b, full)


def vec_scale(
    s: FixedValue,
    v: FixedVector,
    out: FixedFormat,
    log: SaturationLog | None = None,
    site: str = "scale",
) -> FixedVector:
    full = _product_format(s.format, v.format)
    product = _carrier(v.raw, full.width) * s.raw
    raw, n = _convert(product, full, out)
    if log is not None:
        log.record(site, n)
    return FixedVector(raw, out)


def requantize(
    v: FixedVector,
    out: FixedFormat,
    log: SaturationLog | None = None,
    site: str = "requantize",
) -> FixedVector:
    raw, n = _convert(v.raw, v.format, out)
    if log is not None:
        log.record(site, n)
    return FixedVector(raw, out)


def vec_clip(v: FixedVector, lo: FixedVector, hi: FixedVector) -> FixedVector:
    """Elementwise clamp; bounds must share ``v``'s format so the result is exact."""
    if lo.format != v.format or hi.format != v.format:
        raise SolverError("clip bounds must be stored in the iterate format")
    _check_lengths(v, lo)
    _check_lengths(v, hi)
    raw = np.where(v.raw < lo.raw, lo.raw, np.where(v.raw > hi.raw, hi.raw, v.raw))
    return FixedVector(_carrier(raw, v.format.width), v.format)


def dot_exact(
    a: FixedVector,
    b: FixedVector,
    out: FixedFormat,
    log: SaturationLog | None = None,
    site: str = "dot",
) -> FixedValue:
    """Inner product with exact products and an exact accumulation, stored once in ``out``."""
    _check_lengths(a, b)
    prod = _product_format(a.format, b.format)
    acc_width = prod.width + max(1, math.ceil(math.log2(len(a))))
    if acc_width > MAX_WIDTH:
        raise FixedPointFormatError(f"dot accumulator needs {acc_width} bits")

    products = a.raw.astype(object) * b.raw.astype(object)
    total = sum(int(p) for p in products)
    acc = FixedFormat(acc_width, prod.int_bits + acc_width - prod.width)

    raw, n = _convert(np.array([total], dtype=object), acc, out)
    if log is not None:
        log.record(site, n)
    return FixedValue(int(raw[0]), out)


def _check_lengths(a: FixedVector, b: FixedVector) -> None:
    if len(a) != len(b):
        raise SolverError(f"length mismatch: {len(a)} vs {len(b)}")


# ------ Tree-wise matrix-vector multiplication ------


@dataclass(frozen=True)
class StageSchedule:
    """Formats for the product, each intermediate summation level and the result."""

    product: FixedFormat
    stages: tuple[FixedFormat, ...]
    result: FixedFormat

    def to_dict(self) -> dict:
        return {
            "product": self.product.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "result": self.result.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StageSchedule":
        return cls(
            FixedFormat.from_dict(data["product"]),
            tuple(FixedFormat.from_dict(s) for s in data["stages"]),
            FixedFormat.from_dict(data["result"]),
        )


def tree_levels(n: int) -> int:
    return max(0, math.ceil(math.log2(n))) if n > 1 else 0


def default_schedule(
    h_format: FixedFormat,
    v_format: FixedFormat,
    n: int,
    product_width_cap: int = 35,
    result: FixedFormat | None = None,
) -> StageSchedule:
    """Product width capped at ``product_width_cap``; every summation level adds one integer bit."""
    product = h_format.with_bits(
        min(product_width_cap, h_format.width + v_format.width),
        h_format.int_bits + v_format.int_bits,
    )
    stages = tuple(
        product.with_bits(product.width + k, product.int_bits + k)
        for k in range(1, tree_levels(n))
    )
    return StageSchedule(product, stages, result if result is not None else v_format)


def tree_matvec(
    H: FixedMatrix,
    v: FixedVector,
    stage_formats: StageSchedule | None = None,
    log: SaturationLog | None = None,
    site: str = "matvec",
) -> FixedVector:
    """Row-wise products followed by a pairwise binary-tree summation.

    Level ``k`` pairs element ``j`` with ``j + ceil(n/2)``; an odd leftover
    element is carried to the tail of the next level. Every level is stored
    in its scheduled format.
    """
    if H.cols != len(v):
        raise SolverError(f"dimension mismatch: H is {H.rows}x{H.cols}, v has {len(v)}")

    n = H.cols
    schedule = stage_formats or default_schedule(H.format, v.format, n)
    levels = tree_levels(n)
    if len(schedule.stages) < levels - 1:
        raise SolverError(
            f"stage schedule covers {len(schedule.stages) + 1} levels, {levels} needed"
        )

    full = _product_format(H.format, v.format)
    products = _carrier(H.raw, full.width) * _carrier(v.raw, full.width)[np.newaxis, :]

    sat = 0
    level, count = _convert(products, full, schedule.product)
    sat += count
    current = schedule.product

    depth = 0
    while level.shape[1] > 1:
        width = level.shape[1]
        half = (width + 1) // 2
        pairs = width // 2

        summed = _carrier(level[:, :pairs], current.width + 1) + _carrier(
            level[:, half : half + pairs], current.width + 1
        )
        if width % 2:
            summed = np.concatenate(
                [summed, _carrier(level[:, half - 1 : half], current.width + 1)], axis=1
            )

        src = current.with_bits(current.width + 1, current.int_bits + 1)
        depth += 1
        target = schedule.result if summed.shape[1] == 1 else schedule.stages[depth - 1]
        level, count = _convert(summed, src, target)
        sat += count
        current = target

    if n == 1:
        level, count = _convert(level, current, schedule.result)
        sat += count

    if log is not None:
        log.record(site, sat)

    return FixedVector(_carrier(level[:, 0], schedule.result.width), schedule.result)
