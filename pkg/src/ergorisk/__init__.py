"""REBA posture-risk labeling and the ViSK-GAT multimodal classifier in plain numpy."""

__version__ = "0.1.0"
