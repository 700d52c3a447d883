def setup():
    return [1, 2, 3]


CACHE = setup()
# the consumer reads from the cache
def consume():
    return CACHE[0]


print(consume())
