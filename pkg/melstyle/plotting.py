"""
Figures: mel-spectrograms as portable graymaps, alignment attention maps
and training loss curves.
"""
# License: simplified BSD

import logging

import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

LOSS_TERMS = ('L_dur', 'L_mel', 'L_p', 'L_pn', 'L_c', 'total')


def mel_to_graymap(mel):
    """ Grayscale pixels of a mel-spectrogram.

    Parameters
    ----------
    mel: MelSpectrogram or ndarray (T, n_mels)

    Returns
    -------
    pixels: ndarray of uint8 (n_mels, T)
        Min-max normalised to 0-255 over the whole image, highest mel bin on
        the first row. A constant input gives a uniform 128.
    """
    frames = np.asarray(getattr(mel, 'frames', mel), dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError('expected a (T, n_mels) matrix, got shape %s'
                         % (frames.shape,))
    image = frames.T[::-1]
    low, high = image.min(), image.max()
    if not high > low:
        return np.full(image.shape, 128, dtype=np.uint8)
    scaled = np.round(255.0 * (image - low) / (high - low))
    return np.clip(scaled, 0, 255).astype(np.uint8)


def plot_mel(mel, path):
    """Write ``mel`` as a binary PGM (P5) image, ``n_mels`` rows by ``T``
    columns."""
    pixels = mel_to_graymap(mel)
    height, width = pixels.shape
    header = b'P5\n%d %d\n255\n' % (width, height)
    with open(path, 'wb') as f:
        f.write(header + np.ascontiguousarray(pixels).tobytes())
    logger.debug('wrote %dx%d graymap to %s', height, width, path)
    return path


def plot_attention(attention, path, dpi=100):
    """ Save the style-to-content attention maps of a synthesis as one image.

    Parameters
    ----------
    attention: dict
        Level name -> list of ``(T, N)`` weight matrices, one per alignment
        layer, as returned in ``SynthesisResult.attention``.
    path: str
        Output image; the format follows the extension.
    """
    levels = [level for level, maps in attention.items() if len(maps)]
    if not levels:
        raise ValueError('no attention maps to plot')
    n_cols = max(len(attention[level]) for level in levels)
    fig, axes = plt.subplots(len(levels), n_cols, squeeze=False,
                             figsize=(3.5 * n_cols, 2.5 * len(levels)))
    try:
        for row, level in enumerate(levels):
            for col in range(n_cols):
                ax = axes[row, col]
                if col >= len(attention[level]):
                    ax.axis('off')
                    continue
                weights = np.asarray(attention[level][col])
                ax.imshow(weights.T, origin='lower', aspect='auto',
                          interpolation='nearest', cmap='viridis')
                ax.set_title('%s, layer %d' % (level, col + 1), fontsize=9)
                ax.set_xlabel('frame')
                ax.set_ylabel('%s style index' % level)
        fig.tight_layout()
        fig.savefig(path, dpi=dpi)
    finally:
        plt.close(fig)
    logger.debug('attention maps saved to %s', path)
    return path


def plot_losses(history, path, terms=LOSS_TERMS, warmup_steps=None, dpi=100):
    """ Plot loss curves from a training history.

    Parameters
    ----------
    history: list of dict
        ``LossBreakdown.as_dict()`` records, as kept in
        ``TrainingState.history``.
    path: str
    terms: sequence of str
        Keys to draw, one line each.
    warmup_steps: int, optional
        Draws a vertical marker where the warm-up phase ends.
    """
    if not history:
        raise ValueError('empty training history')
    steps = np.array([record['step'] for record in history])
    fig, ax = plt.subplots(figsize=(7, 4))
    try:
        for term in terms:
            values = np.array([record.get(term, np.nan) for record in history],
                              dtype=np.float64)
            if np.all(np.isnan(values)):
                continue
            ax.plot(steps, values, label=term, linewidth=1)
        if warmup_steps is not None:
            ax.axvline(warmup_steps, color='k', linestyle=':', linewidth=1)
        ax.set_xlabel('step')
        ax.set_ylabel('loss')
        ax.legend(loc='upper right', fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=dpi)
    finally:
        plt.close(fig)
    logger.debug('loss curves saved to %s', path)
    return path
