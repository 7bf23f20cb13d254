"""Spectrogram-token masked-autoencoder pipeline for chronic field-potential
recordings: Welch tokenization with time-of-day features, a small
transformer encoder pre-trained under a 1/f-corrected scaled MAE, and
leave-one-subject-out symptom regression."""

__version__ = "0.1.0"
