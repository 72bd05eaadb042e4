"""
Dataset generation and plain-text serialization.

Each clip is one record file:
    line 1  format tag
    line 2  JSON header (seed, family, text, rates, shapes, events)
    line 3  frames payload, whitespace separated, row-major
    line 4  audio payload, whitespace separated
A manifest.json lists every record with its seed and family.
"""
import concurrent.futures
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import DatasetError
from core.message import MediaClip
from utils.synth_generator import SynthConfig, synth_generate

RECORD_TAG = "#chunkar-clip v1"
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "chunkar-dataset"
MANIFEST_VERSION = 1


def clip_seeds(root_seed: int, count: int) -> List[int]:
    """Distinct per-clip seeds derived from one root seed."""
    return [int(s) for s in np.random.SeedSequence(int(root_seed)).generate_state(count)]


def generate_clips(config: SynthConfig, count: int, root_seed: int, workers: int = 4) -> List[MediaClip]:
    """Synthesize `count` clips in parallel; the result order follows the seed order."""
    config.validate()
    seeds = clip_seeds(root_seed, count)
    clips: List[Optional[MediaClip]] = [None] * count

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {
            executor.submit(synth_generate, config, seed): i
            for i, seed in enumerate(seeds)
        }
        for future in concurrent.futures.as_completed(futures):
            clips[futures[future]] = future.result()

    return clips  # type: ignore[return-value]


def _payload(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values.reshape(-1))


def write_clip(path: Union[str, Path], clip: MediaClip) -> None:
    header = {
        "seed": clip.seed,
        "family": clip.family,
        "text": clip.text,
        "fps": clip.fps,
        "audio_rate": clip.audio_rate,
        "frames_shape": list(clip.frames.shape),
        "audio_shape": list(clip.audio.shape),
        "events": clip.events,
    }
    lines = [RECORD_TAG, json.dumps(header, sort_keys=True), _payload(clip.frames), _payload(clip.audio)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_clip(path: Union[str, Path]) -> MediaClip:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read clip record {path}: {e}") from e
    if len(lines) != 4 or lines[0] != RECORD_TAG:
        raise DatasetError(f"{path} is not a clip record")
    try:
        header = json.loads(lines[1])
        frames = np.array(lines[2].split(), dtype=np.float64).reshape(header["frames_shape"])
        audio = np.array(lines[3].split(), dtype=np.float64).reshape(header["audio_shape"])
    except (ValueError, KeyError) as e:
        raise DatasetError(f"malformed clip record {path}: {e}") from e
    return MediaClip(
        frames=frames,
        audio=audio,
        text=header["text"],
        fps=header["fps"],
        audio_rate=header["audio_rate"],
        family=header["family"],
        seed=header["seed"],
        events=header.get("events", {}),
    )


def write_dataset(out_dir: Union[str, Path], clips: List[MediaClip], config: SynthConfig,
                  root_seed: int) -> Path:
    """Write every clip record plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, clip in enumerate(clips):
            name = f"clip_{i:05d}.rec"
            write_clip(out / name, clip)
            entries.append({"file": name, "seed": clip.seed, "family": clip.family, "text": clip.text})
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "root_seed": int(root_seed),
            "config": config.to_dict(),
            "clips": entries,
        }
        manifest_path = out / MANIFEST_NAME
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot write dataset to {out}: {e}") from e
    return manifest_path


def read_manifest(data_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"no dataset manifest at {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise DatasetError(f"corrupt manifest {path}: {e}") from e
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path} is not a version {MANIFEST_VERSION} {MANIFEST_FORMAT} manifest")
    return manifest


def load_dataset(data_dir: Union[str, Path]) -> Tuple[List[MediaClip], Dict[str, Any]]:
    manifest = read_manifest(data_dir)
    clips = [read_clip(Path(data_dir) / entry["file"]) for entry in manifest["clips"]]
    if not clips:
        raise DatasetError(f"dataset at {data_dir} has no clips")
    return clips, manifest
