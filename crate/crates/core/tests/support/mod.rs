#![allow(dead_code)]

pub mod edu_simp;
