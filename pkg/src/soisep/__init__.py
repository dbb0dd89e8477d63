"""Two-stage online separation: phase-masking beamformer followed by a BLSTM binary mask."""

__version__ = "0.1.0"
