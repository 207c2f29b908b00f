import schwarzmpm

if __name__ == "__main__":
    schwarzmpm.main()
