//! Datasets, analytic scenes, images and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod image_io;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_split, load_transforms_json, split_path, Dataset, Frame, Split, TransformsFile};
pub use image_io::{read_png, read_png_over, write_gray_png, write_png};
pub use synthetic::{gen_synthetic, oracle_render, CollisionFixture, SceneSpec, Shape};
