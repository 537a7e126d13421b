//! Firmware latency table and the storage complex shared by the cache,
//! host-interface and passive datapaths.

use serde::{Deserialize, Serialize};

use crate::dram::Dram;
use crate::flash::FlashBackend;
use crate::ftl::Ftl;
use crate::time::SimTime;

/// Fixed per-stage controller and firmware latencies in nanoseconds.
///
/// Defaults are cycle counts on a 250 MHz controller interconnect (4 ns per
/// cycle) rather than measured firmware execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirmwareLatency {
    /// Reading one submission entry from host memory.
    pub command_fetch_ns: f64,
    /// Request parsing and splitting in the host interface layer.
    pub hil_per_request_ns: f64,
    /// Cache tag lookup per internal request.
    pub icl_lookup_ns: f64,
    /// Mapping-table lookup or update per internal request.
    pub ftl_translate_ns: f64,
    /// Flash transaction scheduling per internal request.
    pub fil_schedule_ns: f64,
    /// Writing one completion entry to host memory.
    pub cq_post_ns: f64,
    /// Delivering the completion interrupt.
    pub msi_ns: f64,
    /// Host-controller copy cost per 4KB host page (SATA/UFS).
    pub controller_copy_per_page_ns: f64,
    /// Completion interrupt service routine on the host (SATA/UFS).
    pub isr_ns: f64,
}

impl Default for FirmwareLatency {
    fn default() -> Self {
        FirmwareLatency {
            command_fetch_ns: 256.0,
            hil_per_request_ns: 400.0,
            icl_lookup_ns: 80.0,
            ftl_translate_ns: 200.0,
            fil_schedule_ns: 120.0,
            cq_post_ns: 128.0,
            msi_ns: 64.0,
            controller_copy_per_page_ns: 1024.0,
            isr_ns: 2000.0,
        }
    }
}

fn ns(v: f64) -> SimTime {
    SimTime::from_ns_f64(v)
}

impl FirmwareLatency {
    pub fn validate(&self) -> Vec<String> {
        let fields = [
            ("command_fetch_ns", self.command_fetch_ns),
            ("hil_per_request_ns", self.hil_per_request_ns),
            ("icl_lookup_ns", self.icl_lookup_ns),
            ("ftl_translate_ns", self.ftl_translate_ns),
            ("fil_schedule_ns", self.fil_schedule_ns),
            ("cq_post_ns", self.cq_post_ns),
            ("msi_ns", self.msi_ns),
            ("controller_copy_per_page_ns", self.controller_copy_per_page_ns),
            ("isr_ns", self.isr_ns),
        ];
        fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("firmware_latency.{n} = {v} must be a non-negative number"))
            .collect()
    }

    pub fn command_fetch(&self) -> SimTime {
        ns(self.command_fetch_ns)
    }
    pub fn hil(&self) -> SimTime {
        ns(self.hil_per_request_ns)
    }
    pub fn icl_lookup(&self) -> SimTime {
        ns(self.icl_lookup_ns)
    }
    pub fn ftl_translate(&self) -> SimTime {
        ns(self.ftl_translate_ns)
    }
    pub fn fil_schedule(&self) -> SimTime {
        ns(self.fil_schedule_ns)
    }
    pub fn cq_post(&self) -> SimTime {
        ns(self.cq_post_ns)
    }
    pub fn msi(&self) -> SimTime {
        ns(self.msi_ns)
    }
    pub fn controller_copy_per_page(&self) -> SimTime {
        ns(self.controller_copy_per_page_ns)
    }
    pub fn isr(&self) -> SimTime {
        ns(self.isr_ns)
    }
}

/// Flash array, FTL and controller DRAM.
pub struct Backend {
    pub flash: FlashBackend,
    pub ftl: Ftl,
    pub dram: Dram,
    pub fw: FirmwareLatency,
}

impl Backend {
    /// Time from an internal request reaching the FTL until its flash
    /// commands may be issued.
    pub fn translate_delay(&self) -> SimTime {
        self.fw.ftl_translate() + self.fw.fil_schedule()
    }

    pub fn retire(&mut self, now: SimTime) {
        self.flash.retire(now);
        self.dram.retire(now);
    }
}
