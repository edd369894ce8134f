"""Test suite for Artistic RGB Histogram API."""
