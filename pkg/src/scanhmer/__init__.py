"""Stroke-level handwritten mathematical expression recognition on a small numpy autodiff core."""

__version__ = "0.1.0"
