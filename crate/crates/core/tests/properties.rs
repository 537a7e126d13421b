use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssdsim::config::{DeviceConfig, ExperimentConfig};
use ssdsim::flash::{FlashBackend, FlashGeometry, PageBuf};
use ssdsim::ftl::{Ftl, FtlConfig};
use ssdsim::hil::InterfaceKind;
use ssdsim::mask::SlotMask;
use ssdsim::metrics::{Energy, EnergyTable};
use ssdsim::sim::{run_experiment, HostRequest, SimOutput, Simulator, Source};
use ssdsim::time::SimTime;
use ssdsim::workload::{HostIo, HostOp, PayloadKind, Pattern, WorkloadSpec};

fn tiny() -> DeviceConfig {
    ExperimentConfig::preset("tiny").unwrap().device().clone()
}

fn run(d: &DeviceConfig, spec: &WorkloadSpec, seed: u64) -> SimOutput {
    let mut sim = Simulator::new(d, seed).unwrap();
    sim.configure(spec).unwrap();
    sim.precondition(spec.precondition).unwrap();
    sim.run().unwrap();
    sim.finish()
}

fn spec(pattern: Pattern, qd: u32, ops: u64, block: u64) -> WorkloadSpec {
    WorkloadSpec {
        pattern,
        read_ratio: 0.5,
        block_bytes: block,
        queue_depth: qd,
        total_ops: Some(ops),
        payload: PayloadKind::Pattern,
        verify: true,
        ..WorkloadSpec::default()
    }
}

fn patterns() -> impl Strategy<Value = Pattern> {
    prop_oneof![
        Just(Pattern::SeqRead),
        Just(Pattern::RandRead),
        Just(Pattern::SeqWrite),
        Just(Pattern::RandWrite),
        Just(Pattern::Mixed),
    ]
}

fn kinds() -> impl Strategy<Value = InterfaceKind> {
    prop_oneof![Just(InterfaceKind::Nvme), Just(InterfaceKind::Sata), Just(InterfaceKind::Ufs)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn closed_loop_in_flight_never_exceeds_queue_depth(
        qd in 1u32..48,
        pattern in patterns(),
        kind in kinds(),
        seed in any::<u64>(),
    ) {
        let mut d = tiny();
        d.interface.kind = kind;
        let out = run(&d, &spec(pattern, qd, 300, 8192), seed);
        prop_assert_eq!(out.records.len(), 300);
        prop_assert!(out.inflight_at_completion.iter().all(|&n| n <= qd));
        prop_assert!(out.max_outstanding <= qd as usize);
    }

    #[test]
    fn latency_is_the_sum_of_stage_intervals(
        qd in 1u32..16,
        pattern in patterns(),
        kind in kinds(),
        seed in any::<u64>(),
    ) {
        let mut d = tiny();
        d.interface.kind = kind;
        let out = run(&d, &spec(pattern, qd, 200, 4096), seed);
        for r in &out.records {
            let sum = r.stages().iter().fold(SimTime::ZERO, |a, &s| a + s);
            prop_assert_eq!(sum, r.latency());
        }
    }

    #[test]
    fn host_bytes_equal_dma_bytes(
        qd in 1u32..16,
        pattern in patterns(),
        kind in kinds(),
        block_sectors in 1u64..64,
        seed in any::<u64>(),
    ) {
        let mut d = tiny();
        d.interface.kind = kind;
        let out = run(&d, &spec(pattern, qd, 200, block_sectors * 512), seed);
        let h = out.counters.hil;
        prop_assert_eq!(h.read_bytes + h.write_bytes, h.dma_bytes);
        prop_assert_eq!(out.verify_mismatches, 0);
    }

    #[test]
    fn same_seed_same_transcript(pattern in patterns(), qd in 1u32..16, seed in any::<u64>()) {
        let d = tiny();
        let s = spec(pattern, qd, 150, 4096);
        let a = run(&d, &s, seed);
        let b = run(&d, &s, seed);
        prop_assert_eq!(a.records, b.records);
        prop_assert_eq!(a.counters, b.counters);
    }

    /// Cache on or off, every read returns the newest written payload.
    #[test]
    fn cache_is_transparent(seed in any::<u64>(), qd in 1u32..8, lines in 1u32..8) {
        for enabled in [true, false] {
            let mut d = tiny();
            d.icl.enabled = enabled;
            d.icl.lines = lines;
            let mut s = spec(Pattern::Mixed, qd, 400, 6144);
            s.range_bytes = Some(256 << 10);
            let out = run(&d, &s, seed);
            prop_assert!(out.checked_reads > 0);
            prop_assert_eq!(out.verify_mismatches, 0);
        }
    }

    /// Distinct logical pages written once each can never be programmed
    /// fewer times than they were written.
    #[test]
    fn flash_programs_cover_host_writes_without_overwrites(n in 1u64..400, seed in any::<u64>()) {
        let d = tiny();
        let mut sim = Simulator::new(&d, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pages = sim.identified_sectors() / 8;
        let mut lpns: Vec<u64> = (0..pages).collect();
        for i in 0..n as usize {
            let j = rng.gen_range(i..lpns.len());
            lpns.swap(i, j);
        }
        let script: VecDeque<_> = lpns[..n as usize]
            .iter()
            .map(|&p| HostRequest::Io(HostIo { op: HostOp::Write, offset: p * 4096, len: 4096 }))
            .collect();
        sim.set_source(Source::Script(script), 4);
        sim.run().unwrap();
        let c = sim.finish().counters;
        prop_assert!(c.flash.program_bytes >= c.hil.write_bytes);
    }

    #[test]
    fn doubling_the_energy_table_doubles_dynamic_energy(
        reads in 0u64..1_000_000,
        programs in 0u64..1_000_000,
        erases in 0u64..10_000,
        bursts in 0u64..10_000_000,
    ) {
        let t = EnergyTable::default();
        let flash = ssdsim::flash::FlashStats { reads, programs, erases, ..Default::default() };
        let span = SimTime::from_us(1000);
        let one = Energy::compute(&t, &flash, bursts, span);
        let two = Energy::compute(&t.scaled(2.0), &flash, bursts, span);
        prop_assert_eq!(two.dynamic(), 2.0 * one.dynamic());
    }
}

#[test]
fn doubled_energy_table_doubles_reported_dynamic_energy() {
    let mut cfg = ExperimentConfig::preset("tiny").unwrap();
    let a = run_experiment(&cfg, false).unwrap().summary;
    let e = cfg.device_mut().energy.scaled(2.0);
    cfg.device_mut().energy = e;
    let b = run_experiment(&cfg, false).unwrap().summary;
    assert!(a.energy_flash_j > 0.0);
    assert_eq!(b.energy_flash_j, 2.0 * a.energy_flash_j);
    assert_eq!(b.energy_dram_j, 2.0 * a.energy_dram_j);
}

#[test]
fn sequential_fill_of_empty_device_has_unit_write_amplification() {
    let d = tiny();
    let mut sim = Simulator::new(&d, 1).unwrap();
    let pages = sim.ssd.be.ftl.logical_superpages();
    let mut s = spec(Pattern::SeqWrite, 8, pages, 4096);
    s.payload = PayloadKind::Zero;
    s.verify = false;
    sim.configure(&s).unwrap();
    sim.run().unwrap();
    let c = sim.finish().counters;
    assert_eq!(c.flash.program_bytes, c.hil.write_bytes);
    assert_eq!(c.ftl.gc_invocations, 0);
}

fn geometry() -> FlashGeometry {
    FlashGeometry {
        channels: 2,
        packages_per_channel: 1,
        dies_per_package: 1,
        planes_per_die: 2,
        blocks_per_plane: 48,
        pages_per_block: 8,
        page_size_bytes: 512,
    }
}

fn timing() -> ssdsim::flash::FlashTimingParams {
    tiny().timing.to_params()
}

fn page(slpn: u64, slot: u32, v: u64) -> PageBuf {
    let mut b = vec![0u8; 512];
    b[0..8].copy_from_slice(&slpn.to_le_bytes());
    b[8..12].copy_from_slice(&slot.to_le_bytes());
    b[16..24].copy_from_slice(&v.to_le_bytes());
    b.into_boxed_slice()
}

/// Random full and partial writes plus trims on a small FTL.
fn churn(ftl: &mut Ftl, flash: &mut FlashBackend, rng: &mut ChaCha8Rng, ops: usize, hot: u64) {
    let g = ftl.slots();
    let mut at = SimTime::ZERO;
    for v in 0..ops as u64 {
        at += SimTime::from_us(10);
        let slpn = rng.gen_range(0..hot);
        match rng.gen_range(0..10) {
            0..=5 => {
                let data = (0..g).map(|s| Some(page(slpn, s, v))).collect();
                ftl.write(flash, slpn, data, at).unwrap();
            }
            6..=8 if ftl.is_mapped(slpn) => {
                let slot = rng.gen_range(0..g);
                let dirty = SlotMask::from_slots(g, [slot]);
                let mut data = vec![None; g as usize];
                data[slot as usize] = Some(page(slpn, slot, v));
                ftl.update(flash, slpn, &dirty, &SlotMask::full(g), data, at).unwrap();
            }
            _ => ftl.invalidate(slpn, at).unwrap(),
        }
    }
}

fn contents(ftl: &mut Ftl, flash: &mut FlashBackend) -> Vec<Vec<Option<PageBuf>>> {
    let g = ftl.slots();
    (0..ftl.logical_superpages())
        .map(|s| {
            ftl.read_slots(flash, s, &SlotMask::full(g), SimTime::ZERO)
                .unwrap()
                .into_iter()
                .map(|r| r.data)
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn page_slots_are_conserved(seed in any::<u64>(), ops in 1usize..600, exception_path in any::<bool>()) {
        let cfg = FtlConfig { exception_path, ..FtlConfig::default() };
        let mut ftl = Ftl::new(cfg, &geometry()).unwrap();
        let mut flash = FlashBackend::new(geometry(), timing());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hot = ftl.logical_superpages();
        churn(&mut ftl, &mut flash, &mut rng, ops, hot);
        let a = ftl.page_accounting();
        prop_assert_eq!(a.mapped + a.free + a.dead, a.total);
        for id in 0..ftl.super_blocks() {
            let b = ftl.block_meta(id);
            prop_assert_eq!(b.valid_count, b.popcount());
        }
    }

    #[test]
    fn garbage_collection_preserves_data(seed in any::<u64>(), ops in 50usize..600) {
        let mut ftl = Ftl::new(FtlConfig::default(), &geometry()).unwrap();
        let mut flash = FlashBackend::new(geometry(), timing());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hot = ftl.logical_superpages();
        churn(&mut ftl, &mut flash, &mut rng, ops, hot);
        let before = contents(&mut ftl, &mut flash);
        let erases = ftl.stats().erases;
        ftl.garbage_collect(&mut flash, SimTime::from_us(10_000_000)).unwrap();
        let after = contents(&mut ftl, &mut flash);
        prop_assert!(ftl.stats().erases >= erases);
        prop_assert_eq!(before, after);
    }

    /// Cold data written once and never touched again still gets rotated,
    /// and the rotation never starves GC of space.
    #[test]
    fn cold_blocks_rotate_under_a_hot_set(seed in any::<u64>(), hot_share in 0.05f64..0.5) {
        let mut ftl = Ftl::new(FtlConfig::default(), &geometry()).unwrap();
        let mut flash = FlashBackend::new(geometry(), timing());
        flash.set_timed(false);
        ftl.sequential_fill(&mut flash, SimTime::ZERO).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hot = ((ftl.logical_superpages() as f64 * hot_share) as u64).max(1);
        churn(&mut ftl, &mut flash, &mut rng, 6000, hot);
        let e = ftl.erase_counts();
        let (lo, hi) = (*e.iter().min().unwrap(), *e.iter().max().unwrap());
        prop_assert!(hi - lo <= 8, "erase counts {}..={}", lo, hi);
    }
}
