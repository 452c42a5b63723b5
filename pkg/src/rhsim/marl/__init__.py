from .maddpg import (MaddpgConfig, MaddpgPolicy, ReplayBuffer, RunningNorm,
                     noise_schedule, observation_vector, reward, train_loop)
from .nets import Adam, Mlp, soft_update

__all__ = ["Adam", "MaddpgConfig", "MaddpgPolicy", "Mlp", "ReplayBuffer",
           "RunningNorm", "noise_schedule", "observation_vector", "reward",
           "soft_update", "train_loop"]
