#![allow(dead_code)]

pub mod gradsuite;
pub mod separation;
