"""Tests for toricray."""
