"""Independent reference evaluations shared by several test modules."""

from fractions import Fraction


def admission_oracle(mains, ios):
    """Exact decision of the rate-monotonic admission test.

    ``mains`` holds (C, T) pairs and ``ios`` holds utilizations.  Uses
    lhs <= n(2^(1/n) - 1)  <=>  (1 + lhs/n)^n <= 2, which needs no
    floating point.  With no Main VCPUs the bound is 0.
    """
    lhs = sum((Fraction(c, t) for c, t in mains), Fraction(0))
    lhs += sum(((2 - Fraction(u)) * Fraction(u) for u in ios), Fraction(0))
    n = len(mains)
    if n == 0:
        return lhs <= 0, lhs
    return (1 + lhs / n) ** n <= 2, lhs


def sporadic_server(budget, period, segments):
    """Hand-rolled replenishment list for runs ``[(start, length), ...]``.

    Segments that touch continue one busy interval; each busy interval
    posts a single credit due one period after it began.
    """
    out = []
    end = None
    for start, length in segments:
        if out and end == start:
            out[-1][0] += length
        else:
            out.append([length, start + period])
        end = start + length
    return [tuple(x) for x in out]
