//! Learned components: the spatial goal network, the goal-conditioned policy
//! with its neighbor predictor and goal-free baseline, and the occupancy
//! model used for realism scoring.

mod checkpoint;
mod config;
mod goal;
mod occupancy;
mod traj;
mod train;

pub use checkpoint::{load_goal, load_occupancy, load_traj, save_goal, save_occupancy, save_traj};
pub use config::{ModelConfig, TrainConfig};
pub use goal::{goal_target, sample_goals, GoalArch, GoalMap, GoalNet, GoalPose, GoalSampling, GOAL_CHANNELS, GOAL_KIND};
pub use occupancy::{likelihood_score, LikelihoodScore, OccupancyArch, OccupancyNet, OccupancyPrediction, OCCUPANCY_KIND};
pub use traj::{raw_to_controls, traj_target, EncodedBatch, NeighborQuery, TrajArch, TrajBatch, TrajLosses, TrajNet, TRAJ_KIND};
pub use train::{train_goal, train_loop, train_occupancy, train_traj, BatchLoss, TrainReport};
