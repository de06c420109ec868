#!/usr/bin/env python3
"""Command line entry point: python analyze.py run --config configs/datagen.yaml"""
import sys

from crimesynth.cli import main

if __name__ == "__main__":
    sys.exit(main())
