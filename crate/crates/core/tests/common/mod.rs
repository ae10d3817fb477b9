#![allow(dead_code)]

pub mod clouds;
pub mod dstar;
pub mod loam;
pub mod teb;
