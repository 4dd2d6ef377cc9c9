#![allow(dead_code)]

pub mod gateway;
pub mod oracle;
pub mod schema;
