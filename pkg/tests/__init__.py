"""Tests for risklab."""
