def main():
    """
    Strategy: read the count and the numbers, then scan once for the
    maximum.
    """
    numbers = read_numbers()
    print(find_max(numbers))


def read_numbers():
    """
    Read n from the first line and n integers from the second.
    """
    n = int(input())
    values = [int(tok) for tok in input().split()]
    return values[:n]


def find_max(values):
    """
    Linear scan keeping the largest value seen so far.
    """
    best = values[0]
    for v in values[1:]:
        if v > best:
            best = v
    return best


if __name__ == "__main__":
    main()
