//! Synthetic referring-expression generation over annotated scenes.
//!
//! A sample is produced by drawing a referent and a connected tree of related
//! objects around it, rendering that tree through a template, and keeping the
//! text only if its functional program picks out exactly the referent.

mod generate;
mod layout;
mod program;
mod scene;
mod world;

pub use generate::{
    fill_template, generate_dataset, load_dataset, sample_subgraph, DatasetConfig,
    ExpressionSample, FilledParams, GeneratedDataset, QuotaCell, SamplingWeights, Shortfall,
    SlotFill, Split, SubEdge, Subgraph,
};
pub use layout::{classify_layout, Layout, Piece, Template, TemplateLibrary, MAX_SLOTS};
pub use program::{
    accept, compile_program, difficulty, execute_program, Direction, FunctionalProgram, Step,
};
pub use scene::{
    load_scenes, prepare_scene, save_scenes, BlockRule, GroundTruthSceneGraph, Relation,
    SceneObject, SceneRecord,
};
pub use world::{relation_surface, synth_scenes, World};
