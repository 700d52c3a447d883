#!/usr/bin/env python3
"""Module docstring for a tool with a large preamble."""

import json
import os
import sys

DEFAULTS = {
    "retries": 3,
    "verbose": False,
}

BANNER = "=" * 40


def run():
    """
    Print the banner and the defaults.
    """
    print(BANNER)
    print(json.dumps(DEFAULTS))


run()
