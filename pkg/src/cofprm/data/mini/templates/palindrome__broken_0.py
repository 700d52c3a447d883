def main():
    line = input()
    if line == line[::-1]:
        print("True")
    else:
        print("False")


main()
