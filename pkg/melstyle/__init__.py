"""
melstyle: style-transferring mel-spectrogram synthesis at desk scale.
"""
from .version import __version__  # noqa: F401
from .style_transfer import StyleSpeech  # noqa: F401
