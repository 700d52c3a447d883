def main():
    """
    Strategy: compare the line against its reverse and map the boolean
    onto YES or NO.
    """
    line = input()
    print(verdict(is_palindrome(line)))


def is_palindrome(text):
    """
    True when the text equals its own reverse.
    """
    return text == text[::-1]


def verdict(flag):
    """
    Render the boolean answer in the required YES/NO form.
    """
    return "YES" if flag else "NO"


main()
