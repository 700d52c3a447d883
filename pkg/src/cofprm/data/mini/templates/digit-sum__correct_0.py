def main():
    """
    Strategy: strip the sign, then sum the integer value of each digit
    character.
    """
    n = read_int()
    print(digit_sum(n))


def read_int():
    """
    Read one integer from stdin.
    """
    return int(input())


def digit_sum(n):
    """
    Sum the digits of the absolute value via its decimal string.
    """
    return sum(int(ch) for ch in str(abs(n)))


main()
