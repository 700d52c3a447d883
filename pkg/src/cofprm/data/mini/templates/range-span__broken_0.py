def main():
    n = int(input())
    values = [int(tok) for tok in input().split()][:n]
    print(sum(values) - min(values) * len(values))


main()
