#!/usr/bin/env python3
"""Temporal convergence of VMS-POD on the decaying walled vortex."""
import argparse
import os

from vmspod import diagnostics, dns, experiments


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10, help="mesh cells per side")
    p.add_argument("--R", type=int, default=6)
    p.add_argument("--nu-t", type=float, default=1e-4)
    p.add_argument("--steps", type=int, nargs="+", default=[20, 40, 80, 160], help="ROM steps over the window")
    p.add_argument("--out", default="results")
    args = p.parse_args()
    case = experiments.walled_vortex_case(n=args.n)
    setup = case.setup
    os.makedirs(args.out, exist_ok=True)
    dts = [setup.horizon / k for k in args.steps]
    for scheme in dns.SCHEMES:
        rows = diagnostics.study_varying_dt(setup, dts, scheme, R=args.R, nu_t=args.nu_t)
        meta = dict(scheme=scheme, r=setup.basis.r, R=args.R, nu_t=args.nu_t, tail=f"{case.relative_tail():.3e}")
        text = diagnostics.format_table(rows, "dt", meta)
        path = os.path.join(args.out, f"dt_study_{scheme}.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(text)


if __name__ == "__main__":
    main()
