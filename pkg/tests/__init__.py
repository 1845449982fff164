"""Tests for cdstraj."""
