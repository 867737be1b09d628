"""PPG rhythm classification (NSR / AF / PAC-PVC) with a convolutional BiGRU in numpy."""

__version__ = "0.1.0"
