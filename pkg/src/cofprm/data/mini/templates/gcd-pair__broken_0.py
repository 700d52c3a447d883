def main():
    a, b = read_pair()
    print(gcd(a, b))


def read_pair():
    parts = input().split()
    return int(parts[0]), int(parts[1])


def gcd(a, b):
    while b:
        a, b = b, a % b
    return b


main()
