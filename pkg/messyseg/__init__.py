# messyseg package
"""
Token-level segmentation of noisy, OCR-derived announcement lists
"""

__version__ = "1.0.0"
