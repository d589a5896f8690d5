"""Coevolving user/item embeddings driven by a Rayleigh point process."""

from .events import Event, EventLog, load_event_log, relevant_times, save_event_log, split_by_proportion
from .state import DynamicState, EmbeddingTimeline, ModelParams, apply_event, embedding_at, replay

__version__ = "0.1.0"
