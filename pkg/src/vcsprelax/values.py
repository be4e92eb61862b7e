"""Exact rational values extended with positive infinity.

All objective bookkeeping in this package is done with `ExtValue`: a
`fractions.Fraction` or the single absorbing element `INF`.  Arithmetic is
exact, so equality tests on optima are meaningful (no tolerances).
"""

from __future__ import annotations

from fractions import Fraction


class ExtValue:
    """A rational number or positive infinity.

    Supports addition (saturating at infinity), scalar multiplication by
    nonnegative rationals, and total-order comparison with infinity as the
    greatest element.  Instances are immutable and hashable.
    """

    __slots__ = ("frac",)

    def __init__(self, value=0):
        if isinstance(value, ExtValue):
            self.frac = value.frac
        elif value is None:
            self.frac = None  # infinity
        else:
            self.frac = Fraction(value)

    @staticmethod
    def infinity() -> "ExtValue":
        return ExtValue(None)

    @property
    def is_finite(self) -> bool:
        return self.frac is not None

    def __add__(self, other):
        other = _coerce(other)
        if self.frac is None or other.frac is None:
            return INF
        return ExtValue(self.frac + other.frac)

    __radd__ = __add__

    def __mul__(self, other):
        # scalar multiplication; 0 * inf is disallowed on purpose
        k = Fraction(other)
        if self.frac is None:
            if k <= 0:
                raise ValueError("cannot scale infinity by a nonpositive factor")
            return INF
        return ExtValue(self.frac * k)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = _coerce(other)
        if other.frac is None:
            raise ValueError("cannot subtract infinity")
        if self.frac is None:
            return INF
        return ExtValue(self.frac - other.frac)

    def _key(self, other):
        other = _coerce(other)
        a = self.frac
        b = other.frac
        return a, b

    def __eq__(self, other):
        try:
            a, b = self._key(other)
        except (TypeError, ValueError):
            return NotImplemented
        return a == b

    def __lt__(self, other):
        a, b = self._key(other)
        if a is None:
            return False
        if b is None:
            return True
        return a < b

    def __le__(self, other):
        return self == other or self < other

    def __gt__(self, other):
        return not self <= other

    def __ge__(self, other):
        return not self < other

    def __hash__(self):
        return hash(self.frac)

    def __repr__(self):
        return f"ExtValue({format_value(self)})"

    def __str__(self):
        return format_value(self)


INF = ExtValue(None)
ZERO = ExtValue(0)


def _coerce(x) -> ExtValue:
    if isinstance(x, ExtValue):
        return x
    return ExtValue(x)


def parse_value(token: str) -> ExtValue:
    """Parse 'inf', an integer, or 'p/q' into an ExtValue."""
    token = token.strip()
    if token == "inf":
        return INF
    try:
        return ExtValue(Fraction(token))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"bad rational literal {token!r}") from exc


def format_value(v: ExtValue) -> str:
    """Inverse of parse_value: 'inf', 'p', or 'p/q'."""
    if not v.is_finite:
        return "inf"
    f = v.frac
    if f.denominator == 1:
        return str(f.numerator)
    return f"{f.numerator}/{f.denominator}"
