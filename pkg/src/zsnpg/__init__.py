"""Natural policy gradient solvers and exact oracles for two-player zero-sum Markov games."""
