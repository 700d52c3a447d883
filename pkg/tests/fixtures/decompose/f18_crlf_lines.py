def wind():
    return 1


def unwind():
    return 2


print(wind() + unwind())
