def main():
    """
    Entry point behind a guard.
    """
    print("ok")


if __name__ == "__main__":
    main()
