"""Channel computation, filter banks, boosting, detection and evaluation."""
