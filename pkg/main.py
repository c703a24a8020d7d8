#!/usr/bin/env python3
"""
messyseg - Main Entry Point
Segments OCR'd newspaper announcement lists with a BiLSTM-CRF tagger
"""

import sys

from messyseg.cli import main

if __name__ == "__main__":
    sys.exit(main())
