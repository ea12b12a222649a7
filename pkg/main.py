# main.py
"""Convenience entry point: ``python main.py [flags]`` runs ``app.py reproduce-all [flags]``."""
import sys

from app import main

if __name__ == "__main__":
    sys.exit(main(["reproduce-all", *sys.argv[1:]]))
