# Empty file to make unit tests a Python package
