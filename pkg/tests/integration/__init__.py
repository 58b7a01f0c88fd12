# Empty file to make integration tests a Python package
