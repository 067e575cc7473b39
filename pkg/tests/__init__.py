"""Tests for infoneat."""
