use std::path::Path;

use nncore::{Checkpoint, ParamStore};

use crate::error::{Result, SimError};
use crate::models::config::ModelConfig;
use crate::models::goal::{GoalNet, GOAL_KIND};
use crate::models::occupancy::{OccupancyNet, OCCUPANCY_KIND};
use crate::models::traj::{TrajNet, TRAJ_KIND};

fn archive(kind: &str, config: &ModelConfig, store: &ParamStore) -> Result<Checkpoint> {
    let metadata = serde_json::json!({ "model": config });
    Ok(Checkpoint::from_store(kind, metadata, store))
}

fn open(path: &Path, kind: &str) -> Result<(ModelConfig, ParamStore)> {
    if !path.exists() {
        return Err(SimError::MissingCheckpoint(path.display().to_string()));
    }
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(kind)?;
    let config: ModelConfig = serde_json::from_value(
        ck.metadata
            .get("model")
            .cloned()
            .ok_or_else(|| SimError::Serde("checkpoint metadata lacks a model config".into()))?,
    )?;
    Ok((config, ck.to_store()?))
}

fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, ck.to_json()?.as_bytes())
}

pub fn save_goal(net: &GoalNet, path: &Path) -> Result<()> {
    write(path, &archive(GOAL_KIND, &net.config, &net.store)?)
}

pub fn load_goal(path: &Path) -> Result<GoalNet> {
    let (config, store) = open(path, GOAL_KIND)?;
    let mut net = GoalNet::new(&config, 0)?;
    net.store.load_from(&store)?;
    Ok(net)
}

pub fn save_traj(net: &TrajNet, path: &Path) -> Result<()> {
    write(path, &archive(TRAJ_KIND, &net.config, &net.store)?)
}

pub fn load_traj(path: &Path) -> Result<TrajNet> {
    let (config, store) = open(path, TRAJ_KIND)?;
    let mut net = TrajNet::new(&config, 0)?;
    net.store.load_from(&store)?;
    Ok(net)
}

pub fn save_occupancy(net: &OccupancyNet, path: &Path) -> Result<()> {
    write(path, &archive(OCCUPANCY_KIND, &net.config, &net.store)?)
}

pub fn load_occupancy(path: &Path) -> Result<OccupancyNet> {
    let (config, store) = open(path, OCCUPANCY_KIND)?;
    let mut net = OccupancyNet::new(&config, 0)?;
    net.store.load_from(&store)?;
    Ok(net)
}
