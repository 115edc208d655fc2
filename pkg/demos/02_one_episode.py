"""One full episode: reset, swing a leg, watch the ball go.

The env wraps the whole protocol dance (handshake, beam, ball placement,
lockstep sync) behind reset() and step(). Actions are normalized to [-1, 1]
per controllable joint; default mode scales them to angular velocities.
"""

import numpy as np

from sparkrl import nao, tasks
from sparkrl.envcore import Env, EnvConfig

config = EnvConfig(
    controllable=nao.kick_leg(),   # hip pitch, knee, two ankle joints
    agent_port=4620,
    max_episode_steps=30,
    n_wait=40,                     # let the ball roll out before scoring
)
task = tasks.make_task("simple_kick")

with Env(task, config) as env:
    obs = env.reset()
    print(f"observation vector: {obs.shape[0]} values "
          f"(2 per joint + ball + feet + IMU)")

    total = 0.0
    for k in range(30):
        if k < 8:
            action = np.array([0.0, 1.0, 0.0, 1.0])   # swing hip + ankle
        else:
            action = np.zeros(4)                        # hold still
        result = env.step(action)
        total += result.reward
        ball = result.info["ball_world"]
        if k % 5 == 0 or result.reward:
            print(f"step {k:2d}  t={result.info['sim_time']:.2f}  "
                  f"ball x={ball[0]:+.3f}  reward={result.reward:.4f}")
        if result.terminated or result.truncated:
            break

    outcome = result.info["outcome"]
    print("episode over:", "fell" if result.info["fall"] else "ran out of steps")
    print(f"ball moved {outcome.final_pos[0] - outcome.start_pos[0]:+.3f} m forward")
    print(f"episode reward (= kick distance): {total:.4f}")
