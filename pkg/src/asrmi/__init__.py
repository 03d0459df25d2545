"""Membership-inference auditing for toy CTC/attention speech recognisers."""

__version__ = "0.1.0"
