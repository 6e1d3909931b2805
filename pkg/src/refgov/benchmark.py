"""Shipped benchmark: a 4-state lateral-dynamics surrogate with two modes.

States are scaled lateral variables [roll, roll rate, side slip, yaw rate]
plus a thrust-memory state carrying the previous differential-thrust command
(units of 1e4 N), which both encodes the thrust rate constraint and models
the spool lag of engine thrust into yaw.  Outputs are roll and side-slip
angles in degrees; inputs are aileron [deg], rudder [deg], and differential
thrust [N].  Mode 1 flies on aileron + rudder; mode 2 (vertical stabilizer
loss, rudder column zeroed) flies on aileron + differential thrust.

The matrices are fixed numeric data: a zero-order-hold discretization at
0.2 s of a representative lateral model, with feedback gains from a
discrete LQR design and feedforward gains inverting the closed-loop DC
map so that the applied reference is tracked one-to-one.
"""

import numpy as np

from .ftc import FtcConfig
from .models import (ConstraintSpec, ModeGraph, apply_actuator_fault,
                     build_closed_loop)
from .polytopes import Polytope
from .simkit import ScenarioConfig

OUTPUT_SCALE = 0.12       # degrees per internal angle unit
THRUST_UNIT = 1.0e4       # newtons per thrust-memory unit

A_OPEN = [
    [0.999940153908, 0.179459263407, -0.018282747768, 0.007638227383, 0.0],
    [-0.000877571893, 0.801481868741, -0.174575697677, 0.079245283924, 0.0],
    [0.009478123, 0.006055522349, 0.971941824429, -0.19181576391, 0.0],
    [0.000380458369, -0.015558968717, 0.078806775946, 0.946711732432,
     0.162181212557],
    [0.0, 0.0, 0.0, 0.0, 0.0],
]
B_OPEN = [
    [0.034146364638, 0.00826930524, 2.016736e-06],
    [0.329531411749, 0.069640449852, 2.0339646e-05],
    [0.002177215931, 0.093055721066, -4.776725e-06],
    [0.018249063841, -0.633154188379, 6.4872485e-05],
    [0.0, 0.0, 0.0001],
]
K_NOMINAL = [
    [-1.577082921104, -1.049928613947, 0.349865183304, -0.253893074626,
     -0.022831546362],
    [-0.013174341877, -0.010953360194, -1.17385230587, 0.87707943893,
     0.108710739472],
    [0.0, 0.0, 0.0, 0.0, 0.0],
]
G_NOMINAL = [
    [13.176264004093, 1.235625398608],
    [-0.268097586273, 11.503706468665],
    [0.0, 0.0],
]
K_FAULTY = [
    [-1.542124278921, -1.04031801387, -0.052011405847, 0.180592847698,
     0.036899793385],
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [-2167.78302663092, -1191.362971770288, 17310.713563264468,
     -12178.074762829587, -1465.492795974093],
]
G_FAULTY = [
    [12.686663310066, 5.880532680976],
    [0.0, 0.0],
    [23275.303745134, -166705.0223753065],
]

C_OUT = [
    [OUTPUT_SCALE, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, OUTPUT_SCALE, 0.0, 0.0],
]

# Constraint bounds (nominal / extended)
AILERON_MAX = 21.0
RUDDER_MAX = 3.3
THRUST_MAX = 5.2e4
THRUST_RATE_MAX = 2.2e4
ROLL_MAX = 5.0
SIDESLIP_MAX = 2.0
AILERON_MAX_EXT = 25.0
THRUST_MAX_EXT = 6.9e4
ROLL_MAX_EXT = 6.0
SIDESLIP_MAX_EXT = 3.0
# The rudder surface is lost in mode 2, so its command bound carries no
# physical meaning under the fault hypothesis; leaving it unextended blocks
# the successor-robustness rows (and with them all tracking progress).
RUDDER_MAX_EXT = 30.0

BETA = 0.95
T_EXTENSION = 25
T_DETECT = 6
T_RECOVER = 13
T_TRACKING = 5
REFERENCE = (4.8, 1.8)
PROCESS_NOISE = 2e-2
MEASUREMENT_NOISE = 2e-2


def _h_omega():
    H = np.zeros((5, 5))
    H[:4, :4] = PROCESS_NOISE * np.eye(4)
    return H


def build_modes():
    """The nominal and rudder-failed modes with their shipped gains."""
    H_omega = _h_omega()
    H_xi = MEASUREMENT_NOISE * np.eye(2)
    B_o = np.array(B_OPEN)
    mode1 = build_closed_loop(1, A_OPEN, B_o, C_OUT, K_NOMINAL, G_NOMINAL,
                              H_omega, H_xi)
    mode2 = build_closed_loop(2, A_OPEN, apply_actuator_fault(B_o, 2), C_OUT,
                              K_FAULTY, G_FAULTY, H_omega, H_xi)
    return mode1, mode2


def build_graph():
    mode1, mode2 = build_modes()
    return ModeGraph(modes=(mode1, mode2), successors={1: {2}, 2: set()},
                     priors=np.array([0.5, 0.5]))


def _z1_maps(mode):
    """z1 = inputs produced by this mode's gains plus the thrust rate."""
    K = np.asarray(mode.K)
    G = np.asarray(mode.G)
    rate_x = K[2].copy()
    rate_x[4] -= THRUST_UNIT
    L_x = np.vstack([K, rate_x])
    L_v = np.vstack([G, G[2]])
    return L_x, L_v


def _z2_maps():
    C = np.array(C_OUT)
    F_x = np.vstack([C[0], -C[0], C[1], -C[1]])
    F_v = np.zeros((4, 2))
    return F_x, F_v


def build_spec(mode):
    """Constraint spec matched to one mode's gains."""
    L_x, L_v = _z1_maps(mode)
    F_x, F_v = _z2_maps()
    z1_bounds = np.array([AILERON_MAX, RUDDER_MAX, THRUST_MAX,
                          THRUST_RATE_MAX])
    z1_ext = np.array([AILERON_MAX_EXT, RUDDER_MAX_EXT, THRUST_MAX_EXT,
                       THRUST_RATE_MAX])
    z2_bounds = np.array([ROLL_MAX, ROLL_MAX, SIDESLIP_MAX, SIDESLIP_MAX])
    z2_ext = np.array([ROLL_MAX_EXT, ROLL_MAX_EXT, SIDESLIP_MAX_EXT,
                       SIDESLIP_MAX_EXT])
    return ConstraintSpec(
        L_x=L_x, L_v=L_v,
        Z1=Polytope.box(-z1_bounds, z1_bounds),
        F_x=F_x, F_v=F_v,
        Z2=Polytope.upper_bounds(z2_bounds),
        H_zeta=np.zeros((4, 4)), H_varsigma=np.zeros((4, 4)),
        beta=BETA,
        Z1_plus=Polytope.box(-z1_ext, z1_ext),
        Z2_plus=Polytope.upper_bounds(z2_ext),
        T_e=T_EXTENSION)


def build_spec_map():
    mode1, mode2 = build_modes()
    return {1: build_spec(mode1), 2: build_spec(mode2)}


def vartheta_default(r=REFERENCE):
    return 0.05 * float(np.linalg.norm(r))


def build_ftc_config(omega=0.6, vartheta=None, multistart=8):
    if vartheta is None:
        vartheta = vartheta_default()
    return FtcConfig(omega=omega, vartheta=vartheta, T_d=T_DETECT,
                     T_r=T_RECOVER, T_e=T_EXTENSION, R=np.eye(2),
                     multistart=multistart)


def build_toolkit_config(omega=0.6):
    """Complete benchmark bundle for the CLI and config round-trips."""
    from .config_io import ToolkitConfig
    return ToolkitConfig(name="lateral-surrogate-benchmark",
                         graph=build_graph(), spec_map=build_spec_map(),
                         ftc=build_ftc_config(omega=omega),
                         governor_T=T_TRACKING, k_cap=500,
                         scenarios=build_scenarios())


def build_scenarios():
    """The shipped experiment scripts."""
    r = REFERENCE
    zeros5 = (0.0,) * 5
    return {
        "nominal": ScenarioConfig(
            name="nominal", controller="aorg", horizon=72,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=(),
            seed=20240, runs=100, T=T_TRACKING),
        "rg_baseline": ScenarioConfig(
            name="rg_baseline", controller="rg0", horizon=T_TRACKING + 1,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=(),
            seed=20241, runs=1000, T=0),
        "aorg_first_interval": ScenarioConfig(
            name="aorg_first_interval", controller="aorg",
            horizon=T_TRACKING + 1,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=(),
            seed=20241, runs=1000, T=T_TRACKING),
        "sweep": ScenarioConfig(
            name="sweep", controller="aorg", horizon=72,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, (5.0, 2.0)),), fault_schedule=(),
            seed=20242, runs=1000, T=T_TRACKING, z1_scale=100.0),
        "detection_faultfree": ScenarioConfig(
            name="detection_faultfree", controller="ftc", horizon=T_DETECT + 1,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=(),
            seed=20243, runs=1000, x0_jitter=(1.0, 1.0, 1.0, 1.0, 0.0)),
        "detection_faulty": ScenarioConfig(
            name="detection_faulty", controller="ftc", horizon=T_DETECT + 1,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=((0, 2),),
            seed=20244, runs=1000, x0_jitter=(1.0, 1.0, 1.0, 1.0, 0.0)),
        "recovery": ScenarioConfig(
            name="recovery", controller="ftc", horizon=60,
            x0=np.array(zeros5), v_init=np.zeros(2),
            r_schedule=((0, r),), fault_schedule=((8, 2),),
            seed=20245, runs=100),
    }
