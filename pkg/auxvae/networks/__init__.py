"""Encoder, decoder and predictor networks."""
