def main():
    print("atlas")


if __name__ == "__main__":
    main()
