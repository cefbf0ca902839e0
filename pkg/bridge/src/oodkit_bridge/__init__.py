"""Reducer bridge: produces UMAP/t-SNE-reduced embedding files and derived
manifests for the detection toolkit, communicating purely over the shared
NPY/manifest file contract."""

__version__ = "0.1.0"
