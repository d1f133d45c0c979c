"""Multi-channel speaker diarization toolkit with overlap handling and system fusion."""

__version__ = "0.1.0"

from .timeline import DiarizationHypothesis, Segment, SpeakerAnnotation, Timeline  # noqa: E402

__all__ = ["DiarizationHypothesis", "Segment", "SpeakerAnnotation", "Timeline", "__version__"]
