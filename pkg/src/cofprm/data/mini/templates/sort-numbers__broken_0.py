def main():
    n = int(input())
    values = [int(tok) for tok in input().split()][:n]
    print(" ".join(str(v) for v in sorted(values, reverse=True)))


main()
