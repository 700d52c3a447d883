def main():
    line = input()
    print(reverse(line))


def reverse(text):
    return text


main()
