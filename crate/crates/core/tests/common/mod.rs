#![allow(dead_code)]

pub mod census;
pub mod fixtures;
pub mod gradcheck;
pub mod oracle;
