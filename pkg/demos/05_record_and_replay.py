"""Capture the raw wire traffic of an episode, then dissect it offline.

Every Connection accepts a recorder callable; the CLI's record/replay
commands are built on the same hook. Here we record a short episode,
then walk the trace by hand: count frames per direction, re-decode the
server side, and plot nothing — just print where the ball went.
"""

import base64
import json

import numpy as np

from sparkrl import protocol, tasks
from sparkrl.cli import TraceWriter
from sparkrl.envcore import Env, EnvConfig
from sparkrl import nao

TRACE = "/tmp/sparkrl_demo_trace.jsonl"


def main():
    config = EnvConfig(controllable=nao.kick_leg(), agent_port=4650,
                       max_episode_steps=15, n_wait=10)
    with open(TRACE, "w") as fh:
        writer = TraceWriter(fh)
        with Env(tasks.make_task("simple_kick"), config, recorder=writer) as env:
            env.reset()
            for k in range(15):
                action = [0.0, 1.0, 0.0, 1.0] if k < 8 else np.zeros(4)
                result = env.step(action)
                if result.terminated or result.truncated:
                    break
    print(f"recorded {writer.records} frames to {TRACE}")

    sent = received = 0
    snapshot = None
    ball_track = []
    for line in open(TRACE):
        record = json.loads(line)
        payload = base64.b64decode(record["payload"])
        if record["direction"] == "to_server":
            sent += 1
        else:
            received += 1
            snapshot = protocol.decode_snapshot(payload, snapshot)
            if snapshot.ball_world is not None:
                ball_track.append((snapshot.sim_time, snapshot.ball_world[0]))

    print(f"{sent} frames sent, {received} received")
    print("ball x over time (every 5th sample):")
    for t, x in ball_track[::5]:
        print(f"  t={t:5.2f}  x={x:+.3f}  " + "#" * int(40 * max(x, 0.0)))


if __name__ == "__main__":
    main()
