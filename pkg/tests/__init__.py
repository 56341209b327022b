"""Tests for clusterdet."""
