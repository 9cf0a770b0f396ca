"""Policy-gradient methods: REINFORCE, actor-critic and PPO."""
from .batch import RolloutBatch, StatePolicy, build_batch, collect_episodes, collect_steps
from .losses import (
    ClampCounter,
    adaptive_lr,
    clip_gradient,
    clipped_surrogate,
    clipped_value_loss,
    importance_ratio,
    total_ppo_loss,
    value_loss_and_grad,
)
from .pg import (
    ActorCriticConfig,
    ReinforceConfig,
    TrainResult,
    actor_critic_train,
    actor_critic_update,
    reinforce_train,
    reinforce_update,
)
from .ppo import PpoConfig, ppo_train
