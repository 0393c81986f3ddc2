import os

# headless plotting for the CLI tests
os.environ.setdefault("MPLBACKEND", "Agg")
