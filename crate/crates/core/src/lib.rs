//! Activity and battery co-scheduling against load, solar and price series.

pub mod evaluate;
pub mod forecast;
pub mod instance;
pub mod motif;
pub mod scheduler;
pub mod series;
