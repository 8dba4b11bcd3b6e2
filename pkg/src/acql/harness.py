"""Scenario files, the closed-loop run, CSV logs and run summaries."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from acql import control as ctl
from acql import estimator as est
from acql import robot as rm
from acql import sim
from acql import so3
from acql.errors import (
    NoStanceFeet, NumericalBlowup, QpInfeasibleUnrecovered, SimDiverged, SingularConfiguration, Unreachable,
)
from acql.qp import QpSolver, QpStatus

log = logging.getLogger(__name__)

GAITS = ("StandIdentify", "TrotInPlace")
SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"
PHASE_IDENTIFY, PHASE_STAND, PHASE_TROT = 0, 1, 2
_SWING_KP = 50.0
_SWING_KD = 1.0


@dataclass
class TrotConfig:
    start: float = 5.0
    period: float = 0.5
    apex: float = 0.05
    placement_gain: float = 0.0


@dataclass
class Scenario:
    name: str
    robot_file: Path
    payload: sim.PayloadTruth
    gait: str = "StandIdentify"
    height: float = 0.41
    orientation_ypr: tuple = (0.0, 0.0, 0.0)
    gains: ctl.GainSet = field(default_factory=ctl.GainSet)
    est_gains: est.EstimatorGains = field(default_factory=est.EstimatorGains)
    sim: sim.SimConfig = field(default_factory=sim.SimConfig)
    trot: TrotConfig = field(default_factory=TrotConfig)
    output_dir: Path | None = None

    def __post_init__(self):
        if self.gait not in GAITS:
            raise ValueError(f"gait must be one of {GAITS}, got {self.gait!r}")
        if not Path(self.robot_file).is_file():
            raise FileNotFoundError(f"robot file {self.robot_file} does not exist")
        if self.height <= 0.0:
            raise ValueError("target height must be positive")
        if self.gait == "TrotInPlace" and self.trot.start >= self.sim.duration:
            raise ValueError("trot start must come before the end of the run")
        if abs(self.est_gains.dt - self.sim.dt) > 1e-15:
            raise ValueError("estimator dt must equal the simulator dt")

    @property
    def q_d(self) -> np.ndarray:
        return so3.quat_from_ypr(*self.orientation_ypr)


def _gain_matrix(value, size=3):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    robot = data.get("robot", "default")
    if robot in (None, "default"):
        robot_file = rm.DEFAULT_ROBOT_FILE
    else:
        robot_file = Path(robot)
        if not robot_file.is_absolute():
            robot_file = base_dir / robot_file
    payload = data.get("payload", {})
    targets = data.get("targets", {})
    sim_cfg = sim.SimConfig(**data.get("sim", {}))
    gains = data.get("gains", {})
    ctrl_kwargs = {}
    for key, value in gains.get("controller", {}).items():
        ctrl_kwargs[key] = value if key in ("R_weight", "force_clamp_ratio", "torque_clamp") else _gain_matrix(
            value, 6 if key == "Q" else 3
        )
    est_kwargs = dict(gains.get("estimator", {}))
    est_kwargs.setdefault("dt", sim_cfg.dt)
    out = data.get("output")
    return Scenario(
        name=str(data.get("name", "scenario")),
        robot_file=robot_file,
        payload=sim.PayloadTruth(float(payload.get("m_p", 0.0)), payload.get("r_p", [0.0, 0.0, 0.0])),
        gait=data.get("gait", "StandIdentify"),
        height=float(targets.get("height", 0.41)),
        orientation_ypr=tuple(float(v) for v in targets.get("orientation_ypr", (0.0, 0.0, 0.0))),
        gains=ctl.GainSet(**ctrl_kwargs),
        est_gains=est.EstimatorGains(**est_kwargs),
        sim=sim_cfg,
        trot=TrotConfig(**data.get("trot", {})),
        # outputs are relative to the working directory, robot files to the scenario file
        output_dir=Path(out) if out else None,
    )


def load_scenario(path) -> Scenario:
    """Read a YAML scenario; bare names resolve to the bundled scenarios."""
    path = Path(path)
    if not path.exists() and not path.suffix:
        bundled = SCENARIO_DIR / f"{path.name}.yaml"
        if bundled.exists():
            path = bundled
    if not path.is_file():
        raise FileNotFoundError(f"scenario file {path} does not exist")
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario must be a mapping")
    return scenario_from_dict(data, path.parent)


# run log -----------------------------------------------------------------------

def _vec_cols(prefix, names):
    return [f"{prefix}_{n}" for n in names]


XYZ = ("x", "y", "z")
BASE_COLUMNS = (
    ["t"]
    + _vec_cols("r_b", XYZ) + _vec_cols("v_b", XYZ) + _vec_cols("q_b", ("w", "x", "y", "z"))
    + _vec_cols("omega", XYZ) + ["m_hat"] + _vec_cols("d_hat", XYZ) + _vec_cols("tau_hat", XYZ)
    + ["e_r", "e_q", "V"]
    + [f"F_{leg}_{a}" for leg in rm.LEG_NAMES for a in XYZ]
    + [f"tau_{leg}_{j}" for leg in rm.LEG_NAMES for j in ("roll", "pitch", "knee")]
    + ["converged", "qp_status"]
)
EXTRA_COLUMNS = (
    _vec_cols("x_tilde", XYZ) + _vec_cols("s", XYZ) + _vec_cols("d_hat_dot", XYZ) + _vec_cols("z", XYZ)
    + _vec_cols("e_pos", XYZ) + ["m_hat_raw", "phase", "qp_iters", "qp_stage", "qp_kkt"]
    + [f"stance_{leg}" for leg in rm.LEG_NAMES]
)
COLUMNS = BASE_COLUMNS + EXTRA_COLUMNS
_NUMERIC = [c for c in COLUMNS if c != "qp_status"]


@dataclass
class RunLog:
    """Column arrays keyed by name plus run metadata."""

    data: dict
    qp_status: list
    meta: dict

    def __getitem__(self, key):
        if key == "qp_status":
            return self.qp_status
        return self.data[key]

    def vec(self, prefix, names=XYZ) -> np.ndarray:
        return np.column_stack([self.data[f"{prefix}_{n}"] for n in names])

    def __len__(self):
        return len(self.data["t"])


def _fmt(v) -> str:
    return "%.17g" % v


def write_csv(run: RunLog, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [run.data[c] for c in COLUMNS if c != "qp_status"]
    status_at = COLUMNS.index("qp_status")
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for i in range(len(run)):
            row = [_fmt(c[i]) for c in cols]
            row.insert(status_at, run.qp_status[i])
            fh.write(",".join(row) + "\n")
    return path


def read_csv(path) -> RunLog:
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    data = {c: np.array([float(r[c]) for r in rows]) for c in _NUMERIC}
    return RunLog(data, [r["qp_status"] for r in rows], {})


# closed loop -------------------------------------------------------------------

class _Recorder:
    def __init__(self, n):
        self.data = {c: np.zeros(n) for c in _NUMERIC}
        self.status: list[str] = []
        self.i = 0

    def put(self, name, value):
        self.data[name][self.i] = value

    def put_vec(self, prefix, values, names=XYZ):
        for n, v in zip(names, values):
            self.data[f"{prefix}_{n}"][self.i] = v

    def finish_row(self, status: str):
        self.status.append(status)
        self.i += 1

    def trimmed(self):
        return {k: v[: self.i].copy() for k, v in self.data.items()}, self.status


def _nominal_footprints(model, r_d, R_d):
    """Ground points straight below the hips at the target pose."""
    feet = r_d + model.hip_mount_points @ R_d.T
    feet[:, 2] = 0.0
    return feet


def run_scenario(s: Scenario, seed: int | None = None, dump_qp=None) -> RunLog:
    """Run the closed loop for one scenario.

    Each tick: leg odometry, mass estimate, convergence check, the adaptive
    moment command and update law while identifying, body wrench, force
    distribution, joint torques, then one simulator step.

    Raises:
        SimDiverged: the simulator state left its sanity bounds.
        QpInfeasibleUnrecovered: the distribution QP failed after every fallback.
    """
    model = rm.load_robot(s.robot_file)
    cfg = s.sim
    dt = cfg.dt
    seed = cfg.seed if seed is None else int(seed)
    g = model.gravity
    q_d = s.q_d
    R_d = so3.quat_to_rot(q_d)
    r_d = np.array([0.0, 0.0, s.height])
    target = ctl.MotionTarget(r_d=r_d, q_d=q_d)

    state = rm.RobotState(r_b=r_d.copy(), v_b=np.zeros(3), q_b=q_d.copy(), omega=np.zeros(3))
    footprints = _nominal_footprints(model, r_d, R_d)
    nominal = footprints.copy()
    touchdown = footprints.copy()
    last_phase = None
    latched = False
    half = 0.5 * s.trot.period
    schedule = sim.GaitSchedule(period=s.trot.period, apex=s.trot.apex, start_time=s.trot.start)
    trotting_gait = s.gait == "TrotInPlace"

    controller = ctl.WrenchController(model, s.gains)
    ident = est.PayloadIdentifier(model, s.est_gains)
    sensor = sim.ForceSensor(cfg.force_noise_rel, seed, cfg.sensor_latency_ticks)
    # a one-step difference pairs each velocity change with the force sample that caused it
    acc_filter = rm.AccelerationFilter(dt, window=1)
    solver = QpSolver()

    # symmetric support of the full weight as the first force reading
    applied = np.zeros((4, 3))
    applied[:, 2] = (model.total_mass + s.payload.m_p) * g / 4.0
    prev_q = None
    r_hat, v_hat, a_hat = r_d.copy(), np.zeros(3), np.zeros(3)

    n = cfg.n_ticks + 1
    rec = _Recorder(n)
    dump_fh = open(dump_qp, "w", encoding="ascii") if dump_qp else None
    converged_tick = None
    qp_counts = {st.value: 0 for st in QpStatus}
    fallback_ticks = 0
    try:
        for k in range(n):
            t = k * dt
            trotting = trotting_gait and t >= s.trot.start - 1e-12
            if trotting:
                ident.freeze()
                k_phase = sim.phase_index(t, schedule)
                if k_phase != last_phase:
                    if last_phase is not None:
                        footprints = touchdown.copy()
                    touchdown = footprints.copy()
                    last_phase = k_phase
                    latched = False
                swinging = [leg for leg in range(4) if leg not in schedule.pairs[k_phase % 2]]
                if not latched and t - s.trot.start - k_phase * s.trot.period >= half - 1e-12:
                    support = footprints[list(schedule.pairs[k_phase % 2])]
                    for leg in swinging:
                        touchdown[leg] = sim.capture_point_touchdown(
                            r_hat, v_hat, r_d, nominal[leg], s.height, g, support=support, lead_time=half,
                            gain=s.trot.placement_gain, accel=a_hat,
                        )
                    latched = True
                gait = sim.trot_scheduler(t, schedule, footprints, touchdown)
            else:
                gait = sim.GaitTargets(np.ones(4, dtype=bool), footprints.copy(), np.zeros((4, 3)))

            # sensing: joints from the true body and feet, then odometry
            try:
                joint_q, joint_qd = sim.joints_from_feet(model, state, gait.foot_pos, gait.foot_vel)
            except (Unreachable, SingularConfiguration) as exc:
                raise SimDiverged(f"{s.name}: torso left the leg workspace at t={t:.3f} s ({exc})") from exc
            R = state.rotation
            contact = rm.ContactState(
                stance=gait.stance.copy(),
                foot_pos_body=np.array([R.T @ (gait.foot_pos[i] - state.r_b) for i in range(4)]),
                foot_pos_world=gait.foot_pos.copy(),
            )
            r_hat, v_hat = rm.body_odometry(model, joint_q, joint_qd, contact, state.q_b, state.omega)
            a_hat = acc_filter.update(v_hat)
            meas = rm.RobotState(
                r_b=r_hat, v_b=v_hat, q_b=state.q_b.copy(), omega=state.omega.copy(), a_b=a_hat,
                joint_q=joint_q, joint_qd=joint_qd,
            )

            measured = sensor.measure(applied)
            ident.update_mass(measured, a_hat, contact.stance)
            ctx = est.make_context(model, meas.q_b, meas.omega, q_d)
            if not trotting:
                was = ident.state.converged
                ident.check_convergence(ctx)
                if ident.state.converged and not was:
                    converged_tick = k
                    log.info("%s: converged at t=%.3f s", s.name, t)
            payload_est = ident.payload()

            if not ident.state.converged and not trotting:
                phase = PHASE_IDENTIFY
                u_cmd = ident.control(ctx)
                wrench = controller.identification_wrench(target, meas, payload_est, u_cmd, dt)
            else:
                phase = PHASE_TROT if trotting else PHASE_STAND
                wrench = controller.compute(target, meas, payload_est, dt)

            try:
                forces, sol, problem, stage = ctl.distribute_with_fallback(
                    wrench, contact, model, s.gains, meas, solver
                )
            except NoStanceFeet as exc:
                raise QpInfeasibleUnrecovered(str(exc)) from exc
            if dump_fh is not None:
                dump_fh.write(f"# tick {k} t={_fmt(t)} stage={stage} status={sol.status.value}\n")
                dump_fh.write(problem.qp.dump())
            if sol.status is not QpStatus.OPTIMAL:
                raise QpInfeasibleUnrecovered(f"distribution QP {sol.status.value} at t={t:.3f} s")
            qp_counts[sol.status.value] += 1
            fallback_ticks += stage > 0
            forces[~contact.stance] = 0.0

            u_applied = sim.applied_moment(contact, meas.r_b, forces)
            z = est.manifold_residual(
                ident.state.d_hat, s.payload.disturbance(model, R), meas.omega, s.est_gains
            )
            ident.update(ctx, u_applied, contact.stance)

            tau = ctl.joint_torques_from_forces(model, meas, contact, forces).reshape(4, 3)
            q3 = joint_q.reshape(4, 3)
            if prev_q is not None:
                for leg in np.flatnonzero(~contact.stance):
                    tau[leg] = _SWING_KP * (q3[leg] - prev_q[leg]) + _SWING_KD * joint_qd.reshape(4, 3)[leg]
            prev_q = q3.copy()

            x_tilde = ctx.x_tilde
            s_vec = est.tracking_error_s(ctx, s.est_gains)
            rec.put("t", t)
            rec.put_vec("r_b", state.r_b)
            rec.put_vec("v_b", state.v_b)
            rec.put_vec("q_b", state.q_b, ("w", "x", "y", "z"))
            rec.put_vec("omega", state.omega)
            rec.put("m_hat", ident.state.m_hat)
            rec.put_vec("d_hat", ident.state.d_hat)
            rec.put_vec("tau_hat", est.estimated_payload_moment(ident.state, model))
            rec.put("e_r", float(np.linalg.norm(r_d - r_hat)))
            rec.put("e_q", float(np.max(np.abs(x_tilde))))
            rec.put("V", est.lyapunov_value(s_vec))
            for leg, name in enumerate(rm.LEG_NAMES):
                rec.put_vec(f"F_{name}", forces[leg])
                rec.put_vec(f"tau_{name}", tau[leg], ("roll", "pitch", "knee"))
            rec.put("converged", float(ident.state.converged))
            rec.put_vec("x_tilde", x_tilde)
            rec.put_vec("s", s_vec)
            rec.put_vec("d_hat_dot", ident.state.d_hat_dot)
            rec.put_vec("z", z)
            rec.put_vec("e_pos", r_hat - r_d)
            rec.put("m_hat_raw", ident.state.m_hat_raw)
            rec.put("phase", phase)
            rec.put("qp_iters", sol.iterations)
            rec.put("qp_stage", stage)
            rec.put("qp_kkt", sol.kkt_residual)
            for leg, name in enumerate(rm.LEG_NAMES):
                rec.put(f"stance_{name}", float(contact.stance[leg]))
            rec.finish_row(sol.status.value)

            if k == n - 1:
                break
            applied = forces
            try:
                state = sim.step_dynamics(model, s.payload, state, forces, cfg, contact)
            except NumericalBlowup as exc:
                raise SimDiverged(f"{s.name}: {exc} at t={t:.3f} s") from exc
    finally:
        if dump_fh is not None:
            dump_fh.close()

    data, status = rec.trimmed()
    R0 = so3.quat_to_rot(q_d)
    meta = {
        "name": s.name,
        "gait": s.gait,
        "seed": seed,
        "dt": dt,
        "m_p": s.payload.m_p,
        "r_p": s.payload.r_p.tolist(),
        "tau_p_true": s.payload.moment(R0, g).tolist(),
        "robot_mass": model.total_mass,
        "e_threshold": s.est_gains.e_threshold,
        "hold_time": s.est_gains.hold_time,
        "converged_tick": converged_tick,
        "trot_start": s.trot.start if trotting_gait else None,
        "qp_counts": qp_counts,
        "fallback_ticks": int(fallback_ticks),
    }
    return RunLog(data, status, meta)


# summary -----------------------------------------------------------------------

def convergence_time(t, err, threshold, hold) -> float:
    """Start of the first window of length ``hold`` with ``err < threshold``; nan if none."""
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(t) == 0:
        return math.nan
    below = err < threshold
    start = None
    for i in range(len(t)):
        if below[i]:
            if start is None:
                start = i
            if t[i] - t[start] >= hold - 1e-12:
                return float(t[start])
        else:
            start = None
    if start is not None and t[-1] - t[start] >= hold - 1e-12:
        return float(t[start])
    return math.nan


def _rmse(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else math.nan


@dataclass
class Summary:
    name: str
    convergence_time: float
    converged_flag_time: float
    rmse_position: float
    rmse_orientation: float
    max_position_dev: tuple
    max_orientation_dev: float
    mass_error_final: float
    moment_rel_error_at_convergence: float
    moment_rel_error_final: float
    d_hat_dot_final: float
    max_swing_force: float
    qp_optimal: int
    qp_fallback_ticks: int
    qp_max_kkt: float
    qp_mean_iters: float

    def as_rows(self) -> list[tuple[str, str]]:
        rows = []
        for key, value in self.__dict__.items():
            if isinstance(value, tuple):
                value = " ".join(_fmt(v) for v in value)
            elif isinstance(value, float):
                value = _fmt(value)
            rows.append((key, str(value)))
        return rows

    def table(self) -> str:
        rows = self.as_rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def summarize_run(run: RunLog, threshold: float | None = None, hold: float | None = None) -> Summary:
    meta = run.meta
    threshold = meta.get("e_threshold", 0.01) if threshold is None else threshold
    hold = meta.get("hold_time", 0.2) if hold is None else hold
    t = run["t"]
    e_q = run["e_q"]
    phase = run["phase"] if "phase" in run.data else np.zeros(len(t))
    conv = convergence_time(t, e_q, threshold, hold)
    flag = np.flatnonzero(run["converged"] > 0.5)
    flag_time = float(t[flag[0]]) if flag.size else math.nan

    trot = phase == PHASE_TROT
    if trot.any():
        window = trot
    elif flag.size:
        window = np.arange(len(t)) >= flag[0]
    elif not math.isnan(conv):
        window = t >= conv
    else:
        window = np.zeros(len(t), dtype=bool)
    e_pos = run.vec("e_pos") if "e_pos_x" in run.data else np.column_stack([run["e_r"], 0 * t, 0 * t])
    x_tilde = run.vec("x_tilde") if "x_tilde_x" in run.data else np.column_stack([e_q, 0 * t, 0 * t])
    if window.any():
        rmse_pos = _rmse(np.linalg.norm(e_pos[window], axis=1))
        rmse_ori = _rmse(np.linalg.norm(x_tilde[window], axis=1))
        max_pos = tuple(float(v) for v in np.max(np.abs(e_pos[window]), axis=0))
        max_ori = float(np.max(np.abs(x_tilde[window])))
    else:
        rmse_pos = rmse_ori = max_ori = math.nan
        max_pos = (math.nan,) * 3

    m_p = meta.get("m_p", math.nan)
    tau_true = np.asarray(meta.get("tau_p_true", [math.nan] * 3))
    tau_hat = run.vec("tau_hat")

    def rel(i):
        norm = float(np.linalg.norm(tau_true))
        if norm == 0.0:
            return float(np.linalg.norm(tau_hat[i]))
        return float(np.linalg.norm(tau_hat[i] - tau_true)) / norm

    last = len(t) - 1
    stand_end = last
    if trot.any():
        stand_end = int(np.flatnonzero(trot)[0]) - 1
    d_dot = run.vec("d_hat_dot") if "d_hat_dot_x" in run.data else np.zeros((len(t), 3))
    swing_force = 0.0
    if "stance_FL" in run.data:
        for name in rm.LEG_NAMES:
            mask = run[f"stance_{name}"] < 0.5
            if mask.any():
                f = run.vec(f"F_{name}")[mask]
                swing_force = max(swing_force, float(np.max(np.abs(f))))
    kkt = run["qp_kkt"] if "qp_kkt" in run.data else np.zeros(1)
    iters = run["qp_iters"] if "qp_iters" in run.data else np.zeros(1)
    return Summary(
        name=str(meta.get("name", "")),
        convergence_time=conv,
        converged_flag_time=flag_time,
        rmse_position=rmse_pos,
        rmse_orientation=rmse_ori,
        max_position_dev=max_pos,
        max_orientation_dev=max_ori,
        mass_error_final=float(run["m_hat"][stand_end] - m_p) if len(t) else math.nan,
        moment_rel_error_at_convergence=rel(int(flag[0])) if flag.size else math.nan,
        moment_rel_error_final=rel(stand_end) if len(t) else math.nan,
        d_hat_dot_final=float(np.linalg.norm(d_dot[stand_end])) if len(t) else math.nan,
        max_swing_force=swing_force,
        qp_optimal=sum(1 for st in run.qp_status if st == QpStatus.OPTIMAL.value),
        qp_fallback_ticks=int(np.sum(run["qp_stage"] > 0)) if "qp_stage" in run.data else 0,
        qp_max_kkt=float(np.max(kkt)) if len(kkt) else math.nan,
        qp_mean_iters=float(np.mean(iters)) if len(iters) else math.nan,
    )


def write_summary(summary: Summary, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(summary.as_rows())
    txt_path = out_dir / "summary.txt"
    txt_path.write_text(summary.table(), encoding="ascii")
    return csv_path, txt_path


def run_and_write(s: Scenario, out_dir, seed=None, dump_qp=False) -> tuple[RunLog, Summary]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = run_scenario(s, seed=seed, dump_qp=(out_dir / "qp_dump.txt") if dump_qp else None)
    write_csv(run, out_dir / "log.csv")
    summary = summarize_run(run)
    write_summary(summary, out_dir)
    return run, summary
