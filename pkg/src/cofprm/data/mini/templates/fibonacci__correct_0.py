import sys


def main():
    """
    Strategy: iterative pair rolling gives F(n) in O(n) without recursion
    depth limits.
    """
    n = read_n()
    print(fib(n))


def read_n():
    """
    Read the index from the first line of stdin.
    """
    return int(sys.stdin.readline())


def fib(n):
    """
    Roll (F(k), F(k+1)) forward n times starting from (0, 1).
    """
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


main()
