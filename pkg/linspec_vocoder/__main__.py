#!/usr/bin/env python3
"""Entry point for running as a module: python -m linspec_vocoder"""

from .cli import main

if __name__ == "__main__":
    main()
