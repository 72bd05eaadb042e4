"""
Timestamp tracking and display utilities for the model stage pipeline.
"""
import time
from datetime import datetime
from typing import Dict, List

from core.message import ForwardMessage, TimestampRecord

STAGE_DISPLAY_NAMES = {
    "feature_extract": "Stage B: Feature Extraction",
    "combiner": "Stage C: Combiner",
    "latent_autoreg": "Stage D: Latent Autoregression",
    "recon": "Stage D': Video Reconstruction",
    "text_decoder": "Stage E: Text Decoder",
}


class TimestampTracker:
    """Utility class for tracking and displaying stage execution times."""

    @staticmethod
    def mark_received(message: ForwardMessage, stage_name: str) -> TimestampRecord:
        """Mark when a stage receives its input."""
        ts = message.add_timestamp(stage_name)
        ts.received_time = time.time()
        return ts

    @staticmethod
    def mark_started(message: ForwardMessage, stage_name: str) -> TimestampRecord:
        """Mark when a stage starts processing."""
        ts = message.add_timestamp(stage_name)
        if not ts.received_time:
            ts.received_time = time.time()
        ts.start_time = time.time()
        return ts

    @staticmethod
    def mark_completed(message: ForwardMessage, stage_name: str) -> TimestampRecord:
        """Mark when a stage completes processing."""
        ts = message.add_timestamp(stage_name)
        ts.end_time = time.time()
        return ts

    @staticmethod
    def stage_durations(message: ForwardMessage) -> Dict[str, float]:
        return {
            name: ts.duration_ms
            for name, ts in message.timestamps.items()
            if ts.duration_ms is not None
        }

    @staticmethod
    def display_stage_timestamp(ts: TimestampRecord, indent: int = 0):
        """Display timestamp information for a single stage."""
        indent_str = "  " * indent

        if not ts.start_time:
            return

        start_str = datetime.fromtimestamp(ts.start_time).strftime("%H:%M:%S.%f")[:-3]
        print(f"{indent_str}Started: {start_str}")

        if ts.end_time:
            end_str = datetime.fromtimestamp(ts.end_time).strftime("%H:%M:%S.%f")[:-3]
            print(f"{indent_str}Completed: {end_str}")
            print(f"{indent_str}Duration: {ts.duration_ms:.2f}ms")
        else:
            print(f"{indent_str}Status: Processing...")

    @staticmethod
    def display_pipeline_execution(message: ForwardMessage, stage_order: List[str]):
        """Display the stage timeline of one forward pass."""
        print("\n" + "=" * 60)
        print("=== Forward Pass Timeline ===")
        print("=" * 60)

        for stage_name in stage_order:
            ts = message.get_timestamp(stage_name)
            if ts:
                print(f"\n[{STAGE_DISPLAY_NAMES.get(stage_name, stage_name)}]")
                TimestampTracker.display_stage_timestamp(ts, indent=1)

        starts = [ts.start_time for ts in message.timestamps.values() if ts.start_time]
        ends = [ts.end_time for ts in message.timestamps.values() if ts.end_time]
        if starts and ends:
            total_ms = (max(ends) - min(starts)) * 1000
            print(f"\n{'=' * 60}")
            print(f"Total Forward Duration: {total_ms:.2f}ms")
            print("=" * 60 + "\n")
