def main():
    """
    Strategy: parse two integers from one line of input, add them with a
    helper, and print the result.
    """
    a, b = read_pair()
    print(add(a, b))


def read_pair():
    """
    Read a single line from stdin and split it into two integers.
    """
    parts = input().split()
    return int(parts[0]), int(parts[1])


def add(a, b):
    """
    Return the sum of the two operands.
    """
    return a + b


main()
