"""Decentralized optimization with relayed sums over spanning trees."""
