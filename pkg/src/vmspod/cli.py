"""Command-line pipeline: ``vmspod {dns,pod,rom,study,audit}``.

Every command reads a JSON :class:`RunConfig` (``--config``), applies the
targeted overrides and writes its artifacts under the output directory
(``--out``, else the ``VMSPOD_OUT`` environment variable, else the config's
``out``).  Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import diagnostics, dns, pod, rom, vms
from .config import RunConfig
from .errors import (CompatibilityError, ConvergenceError, FormatError, NumericalError, RankError,
                     ValidationError)
from .pipeline import make_problem, make_space, read_trajectory_csv, run_dns, snapshot_times, trajectory_csv

log = logging.getLogger("vmspod")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {}
    for attr, key in (("r", "r"), ("R", "R"), ("nu_t", "nu_t"), ("dt", "dt"), ("scheme", "scheme")):
        val = getattr(args, attr, None)
        if val is not None:
            over[key] = val
    out = args.out or os.environ.get("VMSPOD_OUT")
    if out:
        over["out"] = out
    return replace(cfg, **over) if over else cfg


def _outdir(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _meta(cfg, **extra):
    m = {"config_hash": cfg.config_hash()}
    m.update({k: (f"{v:#018x}" if k.endswith("fingerprint") and isinstance(v, int) else v) for k, v in extra.items()})
    return m


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    print(path)


def _paths(cfg, args):
    d = cfg.out
    snaps = getattr(args, "snapshots", None) or os.path.join(d, "snapshots.vps")
    basis = getattr(args, "basis", None) or os.path.join(d, "basis.vpb")
    return snaps, basis


# --------------------------------------------------------------------------- commands

def cmd_dns(cfg, args):
    out = _outdir(cfg)
    space, ops = make_space(cfg)
    _, res = run_dns(cfg, space, ops)
    path = os.path.join(out, "snapshots.vps")
    dns.write_snapshots(res.snapshots, path)
    print(path)
    E = res.kinetic_energy(ops.mass)
    lines = ["step,time,kinetic_energy,newton_iterations"]
    its = [0] + list(res.iterations)
    lines += [f"{n},{res.times[n]:.17g},{E[n]:.17g},{its[n]}" for n in range(len(E))]
    meta = _meta(cfg, space_fingerprint=space.fingerprint, scheme=cfg.scheme, dt=cfg.dt)
    _write(os.path.join(out, "dns_trajectory.csv"), diagnostics_header(meta) + "\n".join(lines) + "\n")
    return EXIT_OK


def diagnostics_header(meta):
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def cmd_pod(cfg, args):
    out = _outdir(cfg)
    space, ops = make_space(cfg)
    snaps_path, _ = _paths(cfg, args)
    snaps = dns.read_snapshots(snaps_path, space.fingerprint)
    K = pod.build_correlation(snaps, ops.mass, space.fingerprint)
    basis = pod.compute_pod_basis(K, snaps, ops.mass, cfg.r, ops.stiffness)
    path = os.path.join(out, "basis.vpb")
    pod.write_basis(basis, path)
    print(path)
    total = float(np.trace(K))
    lines = ["index,eigenvalue,h1_norm,captured_fraction"]
    cum = np.cumsum(basis.eigenvalues) / total
    lines += [f"{i + 1},{lam:.17g},{h:.17g},{c:.17g}"
              for i, (lam, h, c) in enumerate(zip(basis.eigenvalues, basis.h1_norms, cum))]
    meta = _meta(cfg, space_fingerprint=space.fingerprint, snapshots_fingerprint=snaps.fingerprint,
                 M=snaps.M, r=cfg.r, rank=basis.d)
    _write(os.path.join(out, "eigenvalues.csv"), diagnostics_header(meta) + "\n".join(lines) + "\n")
    return EXIT_OK


def _rom_context(cfg, args):
    space, ops = make_space(cfg)
    snaps_path, basis_path = _paths(cfg, args)
    basis = pod.read_basis(basis_path, space.fingerprint)
    if basis.r < cfg.r:
        raise ValidationError(f"basis file holds {basis.r} modes, config asks for r={cfg.r}")
    basis = basis.truncate(cfg.r)
    snaps = dns.read_snapshots(snaps_path, space.fingerprint)
    problem = make_problem(cfg)
    sysr = rom.build_reduced_system(basis, ops, problem)
    times = snapshot_times(cfg, snaps.M)
    setup = diagnostics.ROMSetup(sysr, basis, ops.mass, ops.stiffness, times, snaps.data)
    return space, ops, basis, snaps, sysr, setup


def cmd_rom(cfg, args):
    out = _outdir(cfg)
    space, ops, basis, snaps, sysr, setup = _rom_context(cfg, args)
    dt = cfg.effective_rom_dt
    stabilized = cfg.nu_t > 0 and cfg.R < cfg.r
    traj = setup.run(dt, cfg.scheme, cfg.R if stabilized else None, cfg.nu_t if stabilized else 0.0)
    traj.nu_t, traj.R = cfg.nu_t, cfg.R
    meta = _meta(cfg, basis_fingerprint=basis.fingerprint, snapshots_fingerprint=snaps.fingerprint,
                 method="vms-pod" if stabilized else "pod-g", scheme=cfg.scheme, dt=dt, r=cfg.r, R=cfg.R,
                 nu_t=cfg.nu_t)
    _write(os.path.join(out, "rom_trajectory.csv"), trajectory_csv(traj, meta))
    rep = setup.error(traj)
    print(f"linf_l2={rep.linf_l2:.6e} l2_h1={rep.l2_h1:.6e}")
    return EXIT_OK


def cmd_study(cfg, args):
    out = _outdir(cfg)
    space, ops, basis, snaps, sysr, setup = _rom_context(cfg, args)
    meta = _meta(cfg, basis_fingerprint=basis.fingerprint, snapshots_fingerprint=snaps.fingerprint,
                 kind=args.kind, scheme=cfg.scheme, r=cfg.r, nu_t=cfg.nu_t)
    if args.kind == "dt":
        dts = cfg.study_dts or [cfg.effective_rom_dt * 2 ** -k for k in range(3)]
        rows = diagnostics.study_varying_dt(setup, dts, cfg.scheme, cfg.R, cfg.nu_t)
        meta["R"] = cfg.R
    else:
        Rs = cfg.study_Rs or list(range(cfg.r + 1))
        rows = diagnostics.study_varying_R(setup, Rs, cfg.effective_rom_dt, cfg.scheme, cfg.nu_t)
        meta["dt"] = cfg.effective_rom_dt
    _write(os.path.join(out, f"study_{args.kind}.csv"), diagnostics.format_table(rows, args.kind, meta))
    return EXIT_OK


def cmd_audit(cfg, args):
    out = _outdir(cfg)
    space, ops = make_space(cfg)
    _, basis_path = _paths(cfg, args)
    basis = pod.read_basis(basis_path, space.fingerprint).truncate(cfg.r)
    problem = make_problem(cfg)
    sysr = rom.build_reduced_system(basis, ops, problem)
    traj_path = args.trajectory or os.path.join(cfg.out, "rom_trajectory.csv")
    traj, tmeta = read_trajectory_csv(traj_path)
    if traj.r != sysr.r:
        raise CompatibilityError(f"trajectory has r={traj.r}, basis gives r={sysr.r}")
    R = traj.R if traj.R is not None else cfg.R
    D = vms.build_fluctuation_matrix(sysr.S, R)
    dual = diagnostics.riesz_dual_norm_sq(ops, problem.forcing) if problem.forcing is not None else None
    rep = diagnostics.stability_audit(traj, sysr, traj.scheme, traj.nu_t, D, forcing_dual_sq=dual)
    text = diagnostics_header(_meta(cfg, basis_fingerprint=basis.fingerprint,
                                    trajectory_config_hash=tmeta.get("config_hash", ""))) + rep.to_text() + "\n"
    _write(os.path.join(out, "audit.txt"), text)
    print(rep.to_text())
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


COMMANDS = {"dns": cmd_dns, "pod": cmd_pod, "rom": cmd_rom, "study": cmd_study, "audit": cmd_audit}


def build_parser():
    p = argparse.ArgumentParser(prog="vmspod", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, rom_params=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--scheme", choices=dns.SCHEMES)
        sp.add_argument("--r", type=int)
        if rom_params:
            sp.add_argument("--R", type=int)
            sp.add_argument("--nu-t", dest="nu_t", type=float)

    common(sub.add_parser("dns", help="full-order run and snapshot file"), rom_params=False)
    sp = sub.add_parser("pod", help="POD basis from a snapshot file")
    common(sp, rom_params=False)
    sp.add_argument("--snapshots")
    for name, hlp in (("rom", "reduced run (POD-G or VMS-POD)"), ("study", "rate table")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--snapshots")
        sp.add_argument("--basis")
        if name == "study":
            sp.add_argument("--kind", choices=("dt", "R"), required=True)
    sp = sub.add_parser("audit", help="stability audit of a trajectory CSV")
    common(sp)
    sp.add_argument("--basis")
    sp.add_argument("--trajectory")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", vms.StabilityWarning)
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            cfg = _load_config(args)
            return COMMANDS[args.command](cfg, args)
    except (ValidationError, CompatibilityError, FormatError, RankError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
