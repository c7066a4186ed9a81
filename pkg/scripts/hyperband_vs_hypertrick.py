"""Work budgets: Hyperband brackets next to HyperTrick's expected and worst-case rates."""
import argparse

from hypertrick.policy import (bracket_alpha, expected_alpha, hyperband_alpha, hyperband_brackets,
                               min_alpha, solve_eviction_rate)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=int, default=3)
    ap.add_argument("--R", type=int, default=27)
    ap.add_argument("--n0", default="27,9,6,4", help="initial counts; empty for the canonical ones")
    args = ap.parse_args()

    n0 = [int(x) for x in args.n0.split(",")] if args.n0 else None
    bs = hyperband_brackets(args.eta, args.R, n0)
    for b in bs:
        print(f"s={b.s}  n0={b.n0:<3} alpha_s={bracket_alpha(b, args.R):7.2%}  {b.rounds}")
    hb = hyperband_alpha(bs, args.R)
    print(f"Hyperband overall alpha {hb:.2%}")

    # HyperTrick with the same resource granularity: R phases of unit budget
    r = solve_eviction_rate(hb, args.R)
    print(f"\nHyperTrick rate matching that budget over {args.R} phases: r = {r:.6f}")
    print(f"  expected alpha {expected_alpha(r, args.R):.2%}, worst case {min_alpha(r, args.R):.2%}")

    print("\n r     N_p   min alpha  expected alpha")
    for n in (4, 5, 10, 27):
        for r in (0.1, 0.25, 0.5):
            print(f" {r:<5} {n:<5} {min_alpha(r, n):9.2%}  {expected_alpha(r, n):9.2%}")


if __name__ == "__main__":
    main()
