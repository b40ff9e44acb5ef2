#!/usr/bin/env python
"""Compatibility entrypoint.

The command-line implementation lives in:
  scripts/segmentation/mask_slic_processor.py

This file forwards to it so the tool can be run from a checkout with
``python mask_slic_processor.py ...``.
"""

from scripts.segmentation.mask_slic_processor import run

if __name__ == "__main__":
    run()
