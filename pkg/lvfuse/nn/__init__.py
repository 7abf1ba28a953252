"""Numpy network layers, the VGG regression builder and the checkpoint container."""
