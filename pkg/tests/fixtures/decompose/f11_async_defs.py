import asyncio


async def fetch(x):
    """
    Pretend to fetch a value.
    """
    await asyncio.sleep(0)
    return x


async def main():
    """
    Gather two fetches.
    """
    a, b = await asyncio.gather(fetch(1), fetch(2))
    print(a + b)


asyncio.run(main())
