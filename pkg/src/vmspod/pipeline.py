"""Glue between a :class:`RunConfig` and the numerical modules, plus CSV I/O."""
import csv
import io

import numpy as np

from . import dns, problems
from .errors import FormatError, ValidationError
from .fem import TaylorHoodSpace, assemble_operators, build_rect_mesh
from .rom import ROMTrajectory


def make_problem(cfg):
    kw = dict(cfg.problem_params)
    if cfg.problem == "taylor_green":
        return problems.taylor_green(cfg.nu, cfg.T, cfg.dt)
    if cfg.problem == "walled_vortex":
        return problems.walled_vortex(cfg.nu, cfg.T, cfg.dt, **kw)
    if cfg.problem == "lid_cavity":
        return problems.lid_cavity(cfg.nu, cfg.T, cfg.dt, **kw)
    if "u0" not in kw:
        raise ValidationError("custom problem needs problem_params.u0 = [expr_x, expr_y]")
    return problems.custom(cfg.nu, cfg.T, cfg.dt, **kw)


def make_space(cfg):
    space = TaylorHoodSpace(build_rect_mesh(cfg.nx, cfg.ny, cfg.bounds))
    return space, assemble_operators(space)


def run_dns(cfg, space=None, ops=None):
    if space is None:
        space, ops = make_space(cfg)
    prob = make_problem(cfg)
    u_init = dns.steady_state(prob, space, ops=ops) if cfg.spinup else None
    res = dns.solve_nse(prob, space, cfg.scheme, ops=ops, stride=cfg.stride, warmup=cfg.warmup, u_init=u_init)
    return prob, res


def snapshot_times(cfg, M):
    return cfg.dt * (1 + cfg.warmup + cfg.stride * np.arange(M))


def _fmt(x):
    return format(float(x), ".17g")


def _meta_lines(meta):
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def trajectory_csv(traj, meta=None):
    """Trajectory table; the leading columns follow the documented schema and
    the Step-2 ledger and Step-1 coefficients come after them."""
    r = traj.r
    buf = io.StringIO()
    buf.write(_meta_lines(meta or {}))
    w = csv.writer(buf, lineterminator="\n")
    head = ["step", "time", "energy_w", "energy_u", "dissipation"] + [f"a_u_{i + 1}" for i in range(r)]
    head += ["diss_step2", "lhs_numdis", "rhs_numdis", "rel_gap"] + [f"a_w_{i + 1}" for i in range(r)]
    w.writerow(head)
    cum = np.cumsum(traj.diss)
    for n in range(len(traj.times)):
        row = [str(n), _fmt(traj.times[n]), _fmt(traj.energy_w[n]), _fmt(traj.energy_u[n]), _fmt(cum[n])]
        row += [_fmt(v) for v in traj.a_u[n]]
        row += [_fmt(traj.diss[n]), _fmt(traj.lhs[n]), _fmt(traj.rhs[n]), _fmt(traj.rel_gap[n])]
        row += [_fmt(v) for v in traj.a_w[n]]
        w.writerow(row)
    return buf.getvalue()


def read_trajectory_csv(path):
    """Inverse of :func:`trajectory_csv`; returns ``(trajectory, meta)``."""
    meta, rows = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    reader = csv.reader(body)
    try:
        head = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty trajectory file") from None
    need = {"step", "time", "diss_step2", "lhs_numdis", "rhs_numdis"}
    if not need <= set(head):
        raise FormatError(f"{path}: missing ledger columns {sorted(need - set(head))}")
    rows = np.array([[float(x) for x in row] for row in reader])
    col = {h: i for i, h in enumerate(head)}
    au = rows[:, [col[h] for h in head if h.startswith("a_u_")]]
    aw = rows[:, [col[h] for h in head if h.startswith("a_w_")]]
    times = rows[:, col["time"]]
    dt = float(times[1] - times[0]) if len(times) > 1 else float(meta.get("dt", 0.0))
    traj = ROMTrajectory(times, au, aw, meta.get("scheme", "bdf2"), dt,
                         nu_t=float(meta.get("nu_t", 0.0)),
                         R=int(meta["R"]) if meta.get("R", "None") not in ("None", "") else None,
                         diss=rows[:, col["diss_step2"]], lhs=rows[:, col["lhs_numdis"]],
                         rhs=rows[:, col["rhs_numdis"]])
    return traj, meta
