"""Linear Spectrogram Estimation and Vocos2D vocoding - Mel to full-bandwidth linear spectrogram to waveform."""

__version__ = "1.0.0"
