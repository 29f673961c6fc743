#![allow(dead_code)]

pub mod calendar_oracle;
pub mod world;
