#!/usr/bin/env python3
"""Thin wrapper so figures can be rendered as `plots/render.py --spec fig.toml`."""

import sys

from eelabplots.render import main

if __name__ == "__main__":
    sys.exit(main())
