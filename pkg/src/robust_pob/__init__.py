"""Robust output-feedback control of Markov jump linear systems.

Policies are affine in purified outputs and may depend on the last few
modes.  Submodules are imported on demand so that command-line thread
limits take effect before numerical libraries load.
"""

__version__ = "0.1.0"
