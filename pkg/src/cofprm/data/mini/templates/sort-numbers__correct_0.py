def main():
    """
    Strategy: parse the list, sort ascending with the built-in sort, and
    join with single spaces.
    """
    values = read_values()
    print(format_values(sort_values(values)))


def read_values():
    """
    Read n and then n integers from the next line.
    """
    n = int(input())
    return [int(tok) for tok in input().split()][:n]


def sort_values(values):
    """
    Return a new list sorted in nondecreasing order.
    """
    return sorted(values)


def format_values(values):
    """
    Join values with single spaces for printing.
    """
    return " ".join(str(v) for v in values)


main()
