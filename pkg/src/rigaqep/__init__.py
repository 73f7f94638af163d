"""IGA / rIGA discretizations and a shift-and-invert quadratic eigensolver with FLOP accounting."""

__version__ = "0.1.0"
