//! Standard-library side of the Mirror dialogue model: file formats,
//! checkpoints, the evaluation journal and HTTP service, the verification
//! suite and the `mirror` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod journal;
pub mod pipeline;
pub mod server;
pub mod toy;
pub mod verify;
