import functools


# cached fields
@functools.lru_cache(maxsize=8)
# unusual: a comment between decorators
@functools.lru_cache(maxsize=4)
def weird(x):
    return x


weird(3)
