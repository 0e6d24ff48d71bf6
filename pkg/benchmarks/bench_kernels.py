"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--words 2000] [--dim 100] [--repeat 5]

Prints one row per kernel and energy kind with the best-of-N time for each
backend and the speedup. Both backends get identical inputs, and the Gibbs
trajectories are checked for equality before timing.
"""

import argparse
import timeit

import numpy as np

from relboltz import _pykernels
from relboltz._backend import available_backends
from relboltz.model import EnergyKind, init_params


def make_inputs(n_words, n_rel, dim, batch, chains, rounds, seed):
    rng = np.random.default_rng(seed)
    p = init_params(n_words, n_rel, dim, rng, operator_noise=0.3)
    s, r, t = rng.integers(0, n_words, batch), rng.integers(0, n_rel, batch), rng.integers(0, n_words, batch)
    states = np.stack([rng.integers(0, n_words, chains), rng.integers(0, n_rel, chains),
                       rng.integers(0, n_words, chains)], axis=1).astype(np.int64)
    uniforms = rng.random((rounds, chains, 3))
    return p, (s, r, t), states, uniforms


def jobs(k, kind, p, idx, states, uniforms):
    args = (p.C, p.V, p.A, p.b, int(kind))
    w = np.ones(len(idx[0]))

    def grad():
        out = [np.zeros_like(x) for x in (p.C, p.V, p.A, p.b)]
        k.accumulate_grad(*args, *idx, w, *out)

    return {
        "energies": lambda: k.energies(*args, *idx),
        "accumulate_grad": grad,
        "gibbs": lambda: k.gibbs(*args, states.copy(), uniforms, None),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--words", type=int, default=2000)
    ap.add_argument("--relations", type=int, default=11)
    ap.add_argument("--dim", type=int, default=100)
    ap.add_argument("--batch", type=int, default=10_000)
    ap.add_argument("--chains", type=int, default=20)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    p, idx, states, uniforms = make_inputs(args.words, args.relations, args.dim, args.batch,
                                           args.chains, args.rounds, args.seed)
    print(f"|V|={args.words} |R|={args.relations} d={args.dim} batch={args.batch} "
          f"chains={args.chains} rounds={args.rounds}")
    print(f"{'kernel':<16} {'energy':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for kind in EnergyKind:
        if "compiled" in backends:
            a, b = states.copy(), states.copy()
            backends["compiled"].gibbs(p.C, p.V, p.A, p.b, int(kind), a, uniforms, None)
            _pykernels.gibbs(p.C, p.V, p.A, p.b, int(kind), b, uniforms, None)
            assert np.array_equal(a, b), "backends disagree on the Gibbs trajectory"
        times = {}
        for name, mod in backends.items():
            for job, fn in jobs(mod, kind, p, idx, states, uniforms).items():
                times[job, name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        for job in ("energies", "accumulate_grad", "gibbs"):
            row = "".join(f"{times[job, b] * 1e3:>10.2f}ms" for b in backends)
            speed = f"{times[job, 'python'] / times[job, 'compiled']:>9.1f}x" if "compiled" in backends else ""
            print(f"{job:<16} {kind.name.lower():<18}{row}{speed}")


if __name__ == "__main__":
    main()
