"""Recorder backend: stream intake, fan-out queues, segment storage,
stimulus log, alignment, and the control API."""

from .session import (
    AlignedAnnotation,
    InvalidState,
    Session,
    StimulusEvent,
    align,
)
from .storage import (
    SegmentStore,
    SessionFileError,
    StorageFull,
    read_session_file,
    segment_samples,
    write_session_file,
)
from .service import RecorderService

__all__ = [
    "AlignedAnnotation",
    "InvalidState",
    "Session",
    "StimulusEvent",
    "align",
    "SegmentStore",
    "SessionFileError",
    "StorageFull",
    "read_session_file",
    "segment_samples",
    "write_session_file",
    "RecorderService",
]
