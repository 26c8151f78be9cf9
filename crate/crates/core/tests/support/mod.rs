#![allow(dead_code)]
pub mod oracles;
pub mod sim;
pub mod blocks;
