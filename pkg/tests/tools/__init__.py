# This file makes the tests/tools directory a Python package.
