//! On-disk formats: PLY clouds, pose files, `.flo` flow fields and PNG helpers.

pub mod flo;
pub mod ply;
pub mod png;
pub mod poses;
