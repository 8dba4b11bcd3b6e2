"""Compiled kernels against their pure numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--closed-loop]

Kernel timings call the numba dispatcher and its ``.py_func`` side by side in
one process. ``--closed-loop`` also times a 1 s stand run in two subprocesses,
one with ACQL_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from acql import _jit, _kernels
from acql import control as ctl
from acql import robot as rm
from acql import so3


def distribution_args(rng, model):
    q_b = so3.quat_from_rotvec(rng.uniform(-0.1, 0.1, 3))
    R = so3.quat_to_rot(q_b)
    r_b = np.array([0.0, 0.0, 0.41])
    ground = r_b + model.hip_mount_points
    ground[:, 2] = 0.0
    feet = np.array([R.T @ (ground[i] - r_b) for i in range(4)])
    joint_q = np.concatenate([rm.inverse_kinematics(model, feet[i], i) for i in range(4)])
    state = rm.RobotState(r_b, np.zeros(3), q_b, np.zeros(3), joint_q=joint_q)
    contact = rm.ContactState(np.ones(4, dtype=bool), feet, ground)
    wrench = ctl.BodyWrench(np.array([10.0, -5.0, 1000.0]), rng.uniform(-40, 40, 3))
    qp = ctl.assemble_distribution(wrench, contact, model, ctl.GainSet(), state).qp
    return (qp.H, qp.f, qp.A_in, qp.b_in, np.zeros((0, qp.n)), np.zeros(0), 10 * (qp.n + qp.m) + 1)


def body_args(rng):
    return (np.zeros(3), rng.standard_normal(3), np.eye(3), rng.standard_normal(3), np.diag([1.5, 4.0, 4.5]), 100.0,
            rng.uniform(-50, 250, (4, 3)), rng.standard_normal((4, 3)) * 0.3, np.ones(4, dtype=bool),
            rng.standard_normal(3), 1e-3, 9.81)


def bench(label, fn, args, repeat):
    fn(*args)  # warm up, and compile on the first call
    per_call = min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat
    print(f"  {label:<10} {per_call * 1e6:10.1f} us/call")
    return per_call


def closed_loop():
    # a 10-tick run first so compilation is not timed
    code = ("import time; from acql import harness; s = harness.load_scenario('stand_50kg'); "
            "s.sim.duration = 0.01; harness.run_scenario(s); s.sim.duration = 1.0; "
            "t = time.perf_counter(); harness.run_scenario(s); print(time.perf_counter() - t)")
    for flag in ("0", "1"):
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                             env=dict(os.environ, ACQL_DISABLE_NUMBA=flag)).stdout.strip()
        label = "numpy" if flag == "1" else "numba"
        print(f"  {label:<10} {float(out):10.3f} s for 1000 ticks")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--closed-loop", action="store_true")
    args = parser.parse_args()
    if not _jit.NUMBA_ENABLED:
        print("numba disabled (ACQL_DISABLE_NUMBA set or numba missing); both columns run the numpy path")
    rng = np.random.default_rng(0)
    model = rm.load_robot()
    cases = [
        ("qp_dual_active_set (12 vars, 44 rows)", _kernels.qp_dual_active_set, distribution_args(rng, model)),
        ("rigid_body_step", _kernels.rigid_body_step, body_args(rng)),
    ]
    for title, kernel, kargs in cases:
        print(title)
        fast = bench("numba", kernel, kargs, args.repeat)
        slow = bench("numpy", kernel.py_func, kargs, args.repeat)
        print(f"  speed-up   {slow / fast:10.1f} x")
    if args.closed_loop:
        print("closed-loop stand, 1 s")
        closed_loop()


if __name__ == "__main__":
    main()
