"""Alpha-GAN synthesis of 4D task-fMRI-like sequences and its evaluation suite."""

__version__ = "0.1.0"
