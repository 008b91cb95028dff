"""Data ingestion, experiment protocols and the command line."""
