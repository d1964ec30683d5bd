"""Fixed reward-state fixtures with every term evaluated by hand in scalar Python."""
import math

import numpy as np

from ctsrl.envs.rewards import TERM_NAMES, RewardConfig, RewardState, compute_reward

H_DES = 0.3


def biped_state():
    """Two environments, two feet, four joints."""
    return RewardState(
        command=np.array([[0.5, -0.2, 0.3], [1.0, 0.0, -0.5]]),
        lin_vel=np.array([[0.4, 0.1, 0.05], [1.0, 0.0, 0.0]]),
        ang_vel=np.array([[0.2, -0.1, 0.1], [0.0, 0.0, -0.5]]),
        projected_gravity=np.array([[0.1, -0.2, -0.97], [0.0, 0.0, -1.0]]),
        base_height=np.array([0.27, 0.3]),
        joint_vel=np.array([[1.0, -2.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.0]]),
        joint_acc=np.array([[100.0, -50.0, 0.0, 20.0], [0.0, 0.0, 0.0, 0.0]]),
        torques=np.array([[3.0, -4.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]),
        feet_pos=np.array([[[0.10, 0.00, 0.00], [0.13, 0.04, 0.02]],
                           [[0.00, 0.00, 0.00], [0.20, 0.00, 0.00]]]),
        feet_vel=np.array([[[0.6, 0.8, 0.1], [0.0, 0.3, 0.0]],
                           [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]]),
        feet_height=np.array([[0.0, 0.015], [0.0, 0.0]]),
        contact_forces=np.array([[[0.0, 0.0, 50.0], [3.0, 4.0, 0.0]],
                                 [[0.0, 0.0, 0.0], [0.0, 0.0, 25.0]]]),
        n_collision=np.array([2.0, 0.0]),
        n_limit=np.array([1.0, 0.0]),
    )


ACTION = np.array([[0.5, -0.5, 0.2, 0.0], [0.0, 0.0, 0.0, 0.0]])
PREV_ACTION = np.array([[0.3, -0.1, 0.2, 0.1], [0.0, 0.0, 0.0, 0.0]])
PREV_PREV_ACTION = np.array([[0.1, 0.2, -0.3, 0.0], [0.0, 0.0, 0.0, 0.0]])
PHASE = np.array([[0.25, 0.75], [0.6, 0.1]])  # per foot


def hand_terms(smoothness_form="printed"):
    """Every term for both rows, computed one number at a time."""
    s = biped_state()
    out = {name: [] for name in TERM_NAMES}
    for i in range(2):
        c, v, w = s.command[i], s.lin_vel[i], s.ang_vel[i]
        out["lin_tracking"].append(math.exp(-4 * ((c[0] - v[0]) ** 2 + (c[1] - v[1]) ** 2)))
        out["ang_tracking"].append(math.exp(-4 * (c[2] - w[2]) ** 2))
        out["lin_vel_z"].append(v[2] ** 2)
        out["ang_vel_xy"].append(w[0] ** 2 + w[1] ** 2)
        out["joint_accel"].append(sum(x * x for x in s.joint_acc[i]))
        out["joint_power"].append(sum(abs(t) * abs(q) for t, q in zip(s.torques[i], s.joint_vel[i])))
        out["joint_torque"].append(sum(t * t for t in s.torques[i]))
        out["base_height"].append((H_DES - s.base_height[i]) ** 2)
        a, a1, a2 = ACTION[i], PREV_ACTION[i], PREV_PREV_ACTION[i]
        out["action_rate"].append(sum((x - y) ** 2 for x, y in zip(a, a1)))
        if smoothness_form == "printed":
            out["action_smoothness"].append(sum((x - 2 * y - z) ** 2 for x, y, z in zip(a, a1, a2)))
        else:
            out["action_smoothness"].append(sum((x - 2 * y + z) ** 2 for x, y, z in zip(a, a1, a2)))
        out["collision"].append(s.n_collision[i])
        out["joint_limit"].append(s.n_limit[i])
        reg = 0.0
        for f in range(2):
            vx, vy = s.feet_vel[i, f, 0], s.feet_vel[i, f, 1]
            reg += (vx * vx + vy * vy) * math.exp(-s.feet_height[i, f] / (0.025 * H_DES))
        out["feet_regulation"].append(reg)
        out["orientation_xy"].append(math.hypot(s.projected_gravity[i, 0], s.projected_gravity[i, 1]))
        dx = s.feet_pos[i, 0, 0] - s.feet_pos[i, 1, 0]
        dy = s.feet_pos[i, 0, 1] - s.feet_pos[i, 1, 1]
        out["feet_distance"].append(max(0.0, 0.1 - math.hypot(dx, dy)))
        cf = fv = 0.0
        for f in range(2):
            c_des = 1.0 if PHASE[i, f] < 0.5 else 0.0
            force = math.sqrt(sum(x * x for x in s.contact_forces[i, f]))
            speed = math.hypot(s.feet_vel[i, f, 0], s.feet_vel[i, f, 1])
            cf += (1 - c_des) * (1 - math.exp(-0.04 * force))
            fv += c_des * (1 - math.exp(-4 * speed))
        out["feet_contact_force"].append(cf)
        out["feet_velocity"].append(fv)
    return {k: np.array(v) for k, v in out.items()}


# a few row-0 terms frozen as literals worked out by hand
FROZEN_ROW0 = {
    "lin_tracking": math.exp(-0.4),        # error (0.1, -0.3)
    "ang_tracking": math.exp(-0.16),       # error 0.2
    "joint_power": 11.5,                   # 3*1 + 4*2 + 1*0.5
    "joint_torque": 26.0,
    "action_rate": 0.21,                   # 0.04 + 0.16 + 0 + 0.01
    "action_smoothness": 0.34,             # printed sign: (-0.2, -0.5, 0.1, -0.2)
    "feet_distance": 0.05,                 # feet 0.05 m apart
}
SMOOTHNESS_SECOND_DIFFERENCE_ROW0 = 0.30   # (0, -0.1, -0.5, -0.2)


def reward_term_errors(smoothness_form="printed", profile="biped"):
    """Max absolute error per term between compute_reward and the hand evaluation."""
    cfg = RewardConfig.biped(smoothness_form=smoothness_form) if profile == "biped" else \
        RewardConfig(smoothness_form=smoothness_form)
    total, terms = compute_reward(biped_state(), ACTION, PREV_ACTION, PREV_PREV_ACTION, cfg, PHASE, 0.02)
    want = hand_terms(smoothness_form)
    errs = {k: float(np.max(np.abs(terms[k] - want[k]))) for k in TERM_NAMES}
    weights = cfg.weights()
    hand_total = [0.02 * sum(weights[k] * want[k][i] for k in TERM_NAMES) for i in range(2)]
    errs["total"] = float(np.max(np.abs(total - np.array(hand_total))))
    return errs
