"""Run the acceptance suite and print one pass/fail line per criterion.

Extra arguments are passed to pytest, e.g. ``-k "not scaling"``.
"""
import os
import sys

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    tests = os.path.join(HERE, os.pardir, "tests", "test_acceptance.py")
    return pytest.main([os.path.normpath(tests), "-q", "-s", "-p", "no:cacheprovider", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
