//! Discrete-event SSD simulator: flash array, controller DRAM, FTL, an
//! internal cache layer and NVMe / SATA / UFS host front-ends.

pub mod dram;
pub mod engine;
pub mod flash;
pub mod ftl;
pub mod mask;
pub mod time;
pub mod timeline;
pub mod backend;
pub mod icl;
pub mod hil;
pub mod device;
pub mod workload;
pub mod metrics;
pub mod config;
pub mod sim;
pub mod runner;
