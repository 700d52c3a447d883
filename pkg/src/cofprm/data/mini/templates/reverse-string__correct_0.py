def main():
    """
    Strategy: read the whole line, reverse it with slicing, print it.
    """
    line = read_line()
    print(reverse(line))


def read_line():
    """
    Read one line from stdin without the trailing newline.
    """
    return input()


def reverse(text):
    """
    Return the text reversed via slice stepping.
    """
    return text[::-1]


main()
