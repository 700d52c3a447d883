def main():
    """
    Strategy: Euclid's algorithm on the two inputs; the remainder loop
    terminates because the second argument strictly decreases.
    """
    a, b = read_pair()
    print(gcd(a, b))


def read_pair():
    """
    Read two nonnegative integers from one line.
    """
    parts = input().split()
    return int(parts[0]), int(parts[1])


def gcd(a, b):
    """
    Classic Euclid: replace (a, b) with (b, a mod b) until b is zero.
    """
    while b:
        a, b = b, a % b
    return a


if __name__ == "__main__":
    main()
