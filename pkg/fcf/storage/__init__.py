"""Text and image formats for banks, models, manifests, detections and grids."""
