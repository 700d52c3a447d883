VOWELS = "aeiou"


def main():
    """
    Strategy: normalize to lowercase and count membership in the vowel
    set.
    """
    line = input()
    print(count_vowels(line))


def count_vowels(text):
    """
    Count characters whose lowercase form is one of a, e, i, o, u.
    """
    total = 0
    for ch in text.lower():
        if ch in VOWELS:
            total += 1
    return total


main()
