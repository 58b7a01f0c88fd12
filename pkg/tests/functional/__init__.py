# Empty file to make functional tests a Python package
