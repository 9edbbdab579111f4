"""Tests for splatkit."""
