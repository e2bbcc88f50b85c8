"""Motion-centric prototype action head: a desk-scale laboratory for
training the head on synthetic frame-randomized manipulation data and
numerically verifying its structural claims."""

__version__ = "0.1.0"
