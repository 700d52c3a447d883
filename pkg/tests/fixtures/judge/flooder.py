def main():
    """
    Exceed any reasonable output budget in one write.
    """
    import sys
    sys.stdout.write("x" * (2 * 1024 * 1024))


main()
