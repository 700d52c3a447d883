def main():
    print("direct")


main()
