"""Training, evaluation, ablations, checks and the command line."""
