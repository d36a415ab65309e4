"""Command-line tools for selfmetro."""
