def combine(
    first,
    second,
    separator=", ",
):
    """
    Join the two values with the separator.
    """
    return f"{first}{separator}{second}"


def shout(
    text,
):
    """
    Uppercase with an exclamation mark.
    """
    return text.upper() + "!"


print(combine(shout("hi"), shout("bye")))
