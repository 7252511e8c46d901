"""Detection of small GAN-forged regions in CT scans.

Local stage: a light attention CNN scores 32x32 windows on a circular
sliding-window grid and the scores are assembled into a heatmap.
Global stage: GLCM texture of the heatmap, PCA and an SVM decide per slice.
"""

__version__ = "0.1.0"

REAL = "real"
FAKE = "fake"
