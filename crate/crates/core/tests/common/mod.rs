//! Helpers shared between integration test targets.

#![allow(dead_code)]

pub mod gradconfigs;
