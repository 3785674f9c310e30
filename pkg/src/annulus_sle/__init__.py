"""Annulus SLE partition functions, Loewner flows, driving SDEs and lattice loop weights."""
