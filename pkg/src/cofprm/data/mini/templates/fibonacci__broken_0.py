def main():
    n = int(input())
    print(fib(n))


def fib(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return b


main()
