"""Desk-scale face de-spoofing laboratory.

Estimates the additive spoof noise of a face image with an encoder-decoder
network supervised by a frozen depth judge and a GAN discriminator, and ships
a synthetic spoof-degradation corpus generator that provides the ground-truth
noise real datasets lack.
"""

__version__ = "0.1.0"
