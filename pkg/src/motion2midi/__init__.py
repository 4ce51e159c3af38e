"""Motion-to-MIDI: pose keypoints in, performance-event MIDI out."""

__version__ = "0.1.0"
