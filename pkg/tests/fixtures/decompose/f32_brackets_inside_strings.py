def label(
    value,
    wrap="(",
):
    """Wrap the value on the left."""
    return wrap + str(value)


def smile(text):
    """Append a closing paren so the line balances."""
    return text + ")"


print(smile(label(7)))
