#!/usr/bin/env python3
"""Error of VMS-POD against the resolved-scale cut-off R at fixed (r, dt, nu_T)."""
import argparse
import os

from vmspod import diagnostics, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--r", type=int, default=6)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--nu-t", type=float, nargs="+", default=[3e-4, 1e-3, 3e-3])
    p.add_argument("--out", default="results")
    args = p.parse_args()
    case = experiments.walled_vortex_case(n=args.n, window=0.5, warmup=0.0, ref_steps=int(round(0.5 / args.dt)),
                                          r=args.r)
    os.makedirs(args.out, exist_ok=True)
    for nu_t in args.nu_t:
        rows = diagnostics.study_varying_R(case.setup, list(range(args.r + 1)), args.dt, "bdf2", nu_t=nu_t)
        text = diagnostics.format_table(rows, "R", dict(r=args.r, dt=args.dt, nu_t=nu_t))
        with open(os.path.join(args.out, f"r_study_nut{nu_t:g}.csv"), "w") as fh:
            fh.write(text)
        print(text)


if __name__ == "__main__":
    main()
