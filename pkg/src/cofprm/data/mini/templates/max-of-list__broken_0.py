def main():
    """
    Read the numbers and print the largest one.
    """
    numbers = read_numbers()
    print(find_max(numbers))


def read_numbers():
    n = int(input())
    return [int(tok) for tok in input().split()][:n]


def find_max(values):
    best = values[0]
    for v in values[1:]:
        if v < best:
            best = v
    return best


if __name__ == "__main__":
    main()
