"""
Stage pipeline coordinator for the model forward pass.
"""
from typing import Callable, Dict, List

from core.message import ForwardMessage
from core.timestamp_tracker import TimestampTracker

Stage = Callable[[ForwardMessage], ForwardMessage]


class Pipeline:
    """Runs registered stages in order, timestamping each one."""

    def __init__(self, track_time: bool = True):
        self.stages: Dict[str, Stage] = {}
        self.track_time = track_time
        self.tracker = TimestampTracker()

    def register_stage(self, name: str, stage_func: Stage):
        """Register a stage function."""
        self.stages[name] = stage_func

    def execute_pipeline(self, message: ForwardMessage, stage_chain: List[str]) -> ForwardMessage:
        """
        Execute stages in the specified chain.

        Args:
            message: Initial forward message
            stage_chain: List of stage names to execute in order

        Returns:
            Final message after every stage ran
        """
        for stage_name in stage_chain:
            if stage_name not in self.stages:
                raise ValueError(f"Stage {stage_name} not registered")

            if self.track_time:
                self.tracker.mark_received(message, stage_name)
                self.tracker.mark_started(message, stage_name)

            message = self.stages[stage_name](message)

            if self.track_time:
                self.tracker.mark_completed(message, stage_name)

        return message
