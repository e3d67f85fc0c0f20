"""Services module for configuration and file persistence."""
