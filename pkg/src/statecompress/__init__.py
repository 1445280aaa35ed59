"""Spectral state compression of finite-state Markov chains."""
