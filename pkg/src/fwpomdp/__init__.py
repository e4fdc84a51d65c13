"""Finite-window feedback policies for POMDPs."""
