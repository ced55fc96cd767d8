//! Birds-eye rasterization: the world-frame semantic grid, ego-centered
//! context rasters, the saturated distance map and oriented RoI crops.

mod context;
mod distance;
mod grid;
mod roi;

pub use context::{
    goal_cell, rasterize_context, rasterize_frames, visible_neighbors, AgentTrack, DecisionContext,
    RasterConfig,
};
pub use distance::{distance_map, DistanceMap, DEFAULT_SATURATION};
pub use grid::{
    encode_unit, SemanticGrid, LAYER_CENTERLINE, LAYER_DIR_COS, LAYER_DIR_SIN, LAYER_DRIVABLE,
    SEMANTIC_LAYERS,
};
pub use roi::{roi_crop, RoiWindow};
