"""
Combiner scaling benchmark.

Activation counts are exact integers derived from shapes only:

    attention block (Lq queries, Lk keys):  heads*Lq*Lk scores
                                           + Lq*d (q) + 2*Lk*d (k, v) + 2*Lq*d (mix, out)
    feed-forward (L tokens):                L*hidden + L*d
    pooling (N tokens to K outputs):        N*K weights + N*pool_hidden + K*d

"total" counts one forward over T chunks as the modules compute it;
"per_step" counts what producing x_T costs once earlier chunks are cached.
Wall times run in float32 and are the only machine-dependent fields.
"""
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from core.config import RunConfig
from core.errors import ConfigError
from services.service_c_combiner_hub import COMBINER_VARIANTS, build_combiner


@dataclass(frozen=True)
class BenchShape:
    dim: int
    heads: int
    hidden: int
    n: int
    m: int
    layers: int
    memory_size: int
    read_size: int
    process_layers: int
    process_hidden: int
    pool_hidden: int

    @classmethod
    def from_config(cls, config: RunConfig) -> "BenchShape":
        return cls(
            dim=config.dim,
            heads=config.heads,
            hidden=config.hidden,
            n=config.features_per_chunk,
            m=config.combiner_tokens,
            layers=config.combiner_layers,
            memory_size=config.memory_size,
            read_size=config.read_size,
            process_layers=config.process_layers,
            process_hidden=config.process_hidden,
            pool_hidden=config.pool_hidden,
        )


def attention_scores(s: BenchShape, lq: int, lk: int) -> int:
    return s.heads * lq * lk


def attention_count(s: BenchShape, lq: int, lk: int) -> int:
    return attention_scores(s, lq, lk) + 3 * lq * s.dim + 2 * lk * s.dim


def ff_count(s: BenchShape, length: int, hidden: Optional[int] = None) -> int:
    return length * ((hidden or s.hidden) + s.dim)


def pool_count(s: BenchShape, tokens: int, outputs: int) -> int:
    return tokens * outputs + tokens * s.pool_hidden + outputs * s.dim


# -- per-variant counts ---------------------------------------------------------

def _ttm_step(s: BenchShape) -> Dict[str, int]:
    read_in = s.memory_size + s.n
    write_in = s.memory_size + s.read_size + s.n
    process = s.process_layers * (attention_count(s, s.read_size, s.read_size)
                                  + ff_count(s, s.read_size, s.process_hidden))
    activations = (pool_count(s, read_in, s.read_size) + process
                   + pool_count(s, write_in, s.memory_size) + pool_count(s, s.read_size, s.m))
    scores = (read_in * s.read_size + write_in * s.memory_size + s.read_size * s.m
              + s.process_layers * attention_scores(s, s.read_size, s.read_size))
    return {"activations": activations, "scores": scores}


def variant_counts(variant: str, s: BenchShape, chunks: int) -> Dict[str, int]:
    t, n, m, r = chunks, s.n, s.m, s.layers
    if variant == "transformer":
        total = r * (attention_count(s, t * n, t * n) + ff_count(s, t * n))
        step = r * (attention_count(s, n, t * n) + ff_count(s, n))
        scores = r * attention_scores(s, t * n, t * n)
    elif variant == "cls":
        per = n + m
        total = r * (attention_count(s, t * per, t * per) + ff_count(s, t * per))
        step = r * (attention_count(s, per, t * per) + ff_count(s, per))
        scores = r * attention_scores(s, t * per, t * per)
    elif variant == "perceiver":
        total = r * (attention_count(s, t * m, t * (n + m)) + attention_count(s, t * m, t * m) + ff_count(s, t * m))
        step = r * (attention_count(s, m, t * n + m) + attention_count(s, m, m) + ff_count(s, m))
        scores = r * (attention_scores(s, t * m, t * (n + m)) + attention_scores(s, t * m, t * m))
    elif variant == "ttm":
        one = _ttm_step(s)
        total, step, scores = t * one["activations"], one["activations"], t * one["scores"]
    else:
        raise ConfigError(f"unknown combiner '{variant}', expected one of {COMBINER_VARIANTS}")
    return {"total_activations": total, "per_step_activations": step, "attention_scores": scores}


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=np.float64)),
                            np.log(np.asarray(ys, dtype=np.float64)), 1)[0])


# -- timing -----------------------------------------------------------------------

def median_wall_ms(fn: Callable[[], Any], repetitions: int = 5) -> float:
    fn()  # warmup
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000)
    return statistics.median(times)


def time_combiner(variant: str, config: RunConfig, chunks: int, repetitions: int) -> float:
    torch.manual_seed(config.seed)
    combiner = build_combiner(
        variant, dim=config.dim, m=config.combiner_tokens, layers=config.combiner_layers,
        heads=config.heads, hidden=config.hidden, memory_size=config.memory_size,
        read_size=config.read_size, process_layers=config.process_layers,
        process_hidden=config.process_hidden, pool_hidden=config.pool_hidden,
    ).to(torch.float32).eval()
    generator = torch.Generator().manual_seed(config.seed)
    u = torch.randn(1, chunks, config.features_per_chunk, config.dim, generator=generator, dtype=torch.float32)
    with torch.no_grad():
        return median_wall_ms(lambda: combiner(u), repetitions)


def run_benchmark(
    config: RunConfig,
    t_list: Sequence[int],
    variants: Sequence[str] = COMBINER_VARIANTS,
    repetitions: int = 5,
    timed: bool = True,
) -> Dict[str, Any]:
    t_list = [int(t) for t in t_list]
    if len(t_list) < 3 or any(b <= a for a, b in zip(t_list, t_list[1:])) or t_list[0] < 1:
        raise ConfigError(f"T-list must hold at least 3 ascending positive values, got {t_list}")
    if repetitions < 5:
        raise ConfigError(f"benchmark needs at least 5 repetitions, got {repetitions}")
    shape = BenchShape.from_config(config)

    report: Dict[str, Any] = {
        "t_list": t_list,
        "shape": asdict(shape),
        "dtype": "float32",
        "repetitions": repetitions,
        "variants": {},
    }
    for variant in variants:
        rows: List[Dict[str, Any]] = []
        for chunks in t_list:
            row: Dict[str, Any] = {"chunks": chunks, **variant_counts(variant, shape, chunks)}
            if timed:
                row["wall_ms_median"] = time_combiner(variant, config, chunks, repetitions)
            rows.append(row)
        slopes = {
            key: loglog_slope(t_list, [row[key] for row in rows])
            for key in ("total_activations", "per_step_activations", "attention_scores")
        }
        if timed:
            slopes["wall_ms_median"] = loglog_slope(t_list, [row["wall_ms_median"] for row in rows])
        report["variants"][variant] = {"rows": rows, "slopes": slopes}

    single = {v: variant_counts(v, shape, 1)["total_activations"] for v in variants}
    report["single_chunk_activations"] = single
    report["single_chunk_ratio"] = max(single.values()) / min(single.values())
    if "ttm" in variants and "transformer" in variants:
        ttm_rows = report["variants"]["ttm"]["rows"]
        tf_rows = report["variants"]["transformer"]["rows"]
        report["ttm_vs_transformer"] = {
            "chunks": t_list[-1],
            "activation_ratio": ttm_rows[-1]["total_activations"] / tf_rows[-1]["total_activations"],
        }
        if timed:
            report["ttm_vs_transformer"]["wall_ratio"] = (
                ttm_rows[-1]["wall_ms_median"] / tf_rows[-1]["wall_ms_median"])
    return report
