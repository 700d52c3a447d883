def quick():
    """All on the following line, closed same line."""
    return "q"


quick()
