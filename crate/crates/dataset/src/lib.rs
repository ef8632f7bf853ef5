//! Synthetic multi-view scenes annotated with fetching instructions.
//!
//! Each scene is a fixed arrangement of objects on furniture seen from
//! several viewpoints. Every instruction names its target unambiguously in
//! all views; left/right qualifiers appear only when the relation holds in
//! every view.

mod dataset;
mod error;
pub mod grammar;
mod image;
mod scene;
mod vocab;

pub use dataset::{Dataset, DatasetStats, Sample, Split, MANIFEST_VERSION};
pub use error::{DatasetError, Result};
pub use grammar::{check_reference, generate_instruction, Descriptor, Relation, Side};
pub use image::{gray_pgm, Image, Rgb};
pub use scene::{
    generate_scene, render_view, BoundingBox, Color, Furniture, FurnitureKind, GenConfig, Part, Scene,
    SceneObject, Shape, SizeClass, ViewTransform, CANVAS,
};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};
