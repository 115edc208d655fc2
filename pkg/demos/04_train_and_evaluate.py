"""A miniature training run, end to end.

Trains PPO on the velocity-kick task for a few thousand steps (enough to see
the reward move, not enough to master it), prints the metric rows as they
land, then reloads the checkpoint and evaluates the greedy policy.

The full-size recipe is `sparkrl train --task velocity_kick --joints kick4`
with the defaults left alone; this is the same loop shrunk to desk scale.
"""

from sparkrl import nao, trainer
from sparkrl.envcore import EnvConfig


def main():
    env_config = EnvConfig(
        controllable=nao.kick_leg(),
        agent_port=4640,
        max_episode_steps=60,
        seed=0,
    )
    config = trainer.TrainerConfig(
        total_timesteps=8_192,
        num_envs=4,
        n_steps=64,
        epochs=4,
        minibatch_size=64,
        seed=0,
    )
    summary = trainer.train("velocity_kick", config, env_config,
                            out_dir="/tmp/sparkrl_demo_run",
                            log=print)
    print()
    print(f"finished {summary['updates']} updates "
          f"({summary['timesteps']} env steps)")

    mean, std, rewards = trainer.evaluate(summary["checkpoint"],
                                          "velocity_kick", 5, env_config)
    print(f"greedy policy over 5 episodes: {mean:.4f} +/- {std:.4f}")
    print("per-episode:", [round(r, 4) for r in rewards])
    print("artifacts:", summary["metrics"], "and", summary["checkpoint"])


if __name__ == "__main__":
    main()
