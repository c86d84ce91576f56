#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod catalog;
pub mod plan;
pub mod planner;
pub mod semcache;
pub mod stats;
pub mod temporal;
pub mod workload;
