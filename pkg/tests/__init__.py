"""Tests for the conflict_ppo package."""
