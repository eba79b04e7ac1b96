# This file makes the tests/tools/fof directory a Python package.
