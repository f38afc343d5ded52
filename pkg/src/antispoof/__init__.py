"""Spoofed-speech countermeasure toolkit.

Front-ends (LFCC, MFCC, IMFCC, filterbank energies, CQCC), GMM and x-vector
back-ends, decision-level feature switching and EER / min t-DCF scoring.
"""

__version__ = "0.1.0"
