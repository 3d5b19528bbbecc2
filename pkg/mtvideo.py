#!/usr/bin/env python3
"""
Command-line entry point for the mtvideo toolkit
"""

import sys
from app.main import run


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
