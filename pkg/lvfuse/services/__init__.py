"""Storage helpers shared by the pipeline modules."""
