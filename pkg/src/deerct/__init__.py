"""Few-view CT reconstruction: analytic Radon/FBP operators, a learned
point-wise back-projection layer with U-net refinement, and the training and
evaluation harness around them."""

__version__ = "0.1.0"
