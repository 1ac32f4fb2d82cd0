"""Voice onset time measurement by structured prediction over a BiLSTM encoder."""

__version__ = "0.1.0"
