def main():
    n = int(input())
    print(sum(int(ch) for ch in str(n)))


main()
