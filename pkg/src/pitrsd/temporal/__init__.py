"""Recurrent step and remaining-duration model over per-frame features."""
