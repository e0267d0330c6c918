"""Tests for hybridkit."""
