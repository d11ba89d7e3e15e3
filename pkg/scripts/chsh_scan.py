#!/usr/bin/env python3
"""Scan CHSH violation of the simulated statistics across the state family.

For each p, the measurement settings are grid-searched in the x-z plane for
the largest oracle CHSH value, then the trit protocol is simulated at those
settings and its empirical S is compared to the oracle.

    python3 scripts/chsh_scan.py --rounds 200000
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from lhvsim.bloch import State
from lhvsim.protocols import ProtocolId
from lhvsim.verify import chsh_estimate


def best_settings(state: State, grid: int = 61):
    """Best x-z plane CHSH settings by exhaustive search on the angle grid.

    In the x-z plane the correlation is E(a, b) = cos a cos b + k sin a sin b
    with k = 2 sqrt(p(1-p)), so S broadcasts over all angle quadruples.
    """
    angles = np.linspace(0.0, np.pi, grid)
    k = 2.0 * np.sqrt(state.p * (1.0 - state.p))
    e = np.cos(angles)[:, None] * np.cos(angles)[None, :] + k * (
        np.sin(angles)[:, None] * np.sin(angles)[None, :]
    )
    s = (
        e[:, None, :, None]  # E(a1, b1)
        + e[:, None, None, :]  # E(a1, b2)
        + e[None, :, :, None]  # E(a2, b1)
        - e[None, :, None, :]  # E(a2, b2)
    )
    i1, i2, j1, j2 = np.unravel_index(np.argmax(s), s.shape)

    def vec(a):
        return np.array([np.sin(a), 0.0, np.cos(a)])

    best = tuple(vec(angles[i]) for i in (i1, i2, j1, j2))
    return best, float(s[i1, i2, j1, j2])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=200000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--p", type=float, nargs="*", default=[0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    args = ap.parse_args()

    print("p      S_oracle  S_simulated  stderr")
    for p in args.p:
        state = State(p)
        settings, s_best = best_settings(state)
        est = chsh_estimate(ProtocolId.TRIT, state, settings, args.rounds, seed=args.seed)
        print(f"{p:.3f}  {s_best:8.4f}  {est.value:11.4f}  {est.stderr:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
