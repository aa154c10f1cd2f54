"""Unit test package for guided_dg."""
