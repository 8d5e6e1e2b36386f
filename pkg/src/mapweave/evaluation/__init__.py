"""Map-construction metrics."""
