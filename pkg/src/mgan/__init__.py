"""Multi-channel conditional GAN synthesis of PET from label and CT, at desk scale."""

__version__ = "0.1.0"
