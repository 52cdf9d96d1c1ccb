"""Throughput of the compiled core against the pure-Python core.

    python3 benchmarks/bench_kernels.py --steps 20000
"""

from __future__ import annotations

import argparse
import time

from popdelay import _backend
from popdelay.delayed_dynamics import DelayMatrix, init, run
from popdelay.games import rps
from popdelay.revision import ProtocolParams
from popdelay.tuner import TunerConfig


def time_core(name: str, steps: int, tuner: bool, scheme: str, repeats: int) -> float:
    game = rps(1.0, 2.0)
    params = ProtocolParams(0.25, 3)
    delays = DelayMatrix.abs_diff(3)
    h = 1e-3
    best = float("inf")
    for _ in range(repeats):
        state = init(game, params, delays, [0.6, 0.2, 0.2], 1.0, h,
                     tuner=TunerConfig(lambda0=1.0, enabled=tuner), scheme=scheme, backend=name)
        t0 = time.perf_counter()
        run(state, steps * h, stride=50)
        best = min(best, time.perf_counter() - t0)
    return steps / best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--scheme", choices=("euler", "heun"), default="euler")
    ap.add_argument("--tuner", action="store_true", help="enable rate tuning")
    args = ap.parse_args()

    cores = ["python"]
    if _backend.compiled_available():
        cores.insert(0, "cython")
    else:
        print("compiled core not built; timing the Python core only")
    rates = {}
    for name in cores:
        rates[name] = time_core(name, args.steps, args.tuner, args.scheme, args.repeats)
        print(f"{name:>7}: {rates[name]:12,.0f} steps/s")
    if len(rates) == 2:
        print(f"speedup: {rates['cython'] / rates['python']:.1f}x")


if __name__ == "__main__":
    main()
