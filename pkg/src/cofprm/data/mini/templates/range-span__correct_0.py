def main():
    """
    Strategy: one pass tracking both extremes, then print their gap.
    """
    values = read_values()
    lo, hi = extremes(values)
    print(hi - lo)


def read_values():
    """
    Read n and then n integers from the following line.
    """
    n = int(input())
    return [int(tok) for tok in input().split()][:n]


def extremes(values):
    """
    Return (minimum, maximum) found in one linear scan.
    """
    lo = hi = values[0]
    for v in values[1:]:
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    return lo, hi


main()
