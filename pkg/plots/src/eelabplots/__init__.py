"""Figure rendering for eelab CSV outputs.

This package never recomputes statistics; it only consumes the CSV files
written by the eelab command line tool and turns them into figures.
"""
