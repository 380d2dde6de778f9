import statistics

import numpy as np
import pytest

from srde import BlockConfig, HardwareSpec, Tensor, measure_latency


@pytest.fixture(scope="session")
def throughput_ratio():
    """One-worker vs four-worker median latency ratio on 256x256x25.

    Measured once per session: repeating the measurement back to back on
    shared machines drains CPU burst quotas and makes the second result
    meaningless. Single-run measurements interleave the worker counts so
    both sides sample the same machine conditions.
    """
    rng = np.random.default_rng(4)
    f = Tensor(rng.random((1, 25, 256, 256), dtype=np.float32))
    b = Tensor(rng.random((1, 25, 256, 256), dtype=np.float32))
    cfg = BlockConfig(128, 128, 25)  # 4 balanced column tasks
    one = HardwareSpec(workers=1)
    four = HardwareSpec(workers=4)
    runs1, runs4 = [], []
    for _ in range(5):
        runs1.append(
            measure_latency(f, b, cfg, one, repeats=1, override=True).median_ms
        )
        runs4.append(
            measure_latency(f, b, cfg, four, repeats=1, override=True).median_ms
        )
    return statistics.median(runs1) / statistics.median(runs4)
