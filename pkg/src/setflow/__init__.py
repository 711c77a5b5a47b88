"""Level-set mean curvature flow with transport and executable comparison checks."""

__version__ = "0.1.0"
