//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed. Pass criterion numbers as arguments to
//! run a subset.

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use num::{BigInt, BigRational};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssdsim::config::{ExperimentConfig, PRESETS};
use ssdsim::flash::{FlashAddress, FlashBackend, TxnKind};
use ssdsim::ftl::{BlockState, Ftl};
use ssdsim::hil::arbiter::{Arbiter, Arbitration};
use ssdsim::hil::nvme::{HostQueuePair, NvmeController, Status, SubmissionEntry};
use ssdsim::hil::prp::{build_prp_with_lists, traverse_prp};
use ssdsim::hil::{HostMemory, InterfaceKind, HOST_PAGE};
use ssdsim::mask::SlotMask;
use ssdsim::metrics::RunSummary;
use ssdsim::runner::{run_points, run_to_dir};
use ssdsim::sim::{build_ssd, HostRequest, Simulator, Source};
use ssdsim::time::SimTime;
use ssdsim::workload::{HostIo, HostOp, PayloadKind, Pattern, Precondition, WorkloadSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("acceptance config parses")
}

fn summaries(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>, String> {
    let pts = run_points(cfg, 8).map_err(|e| e.to_string())?;
    Ok(pts.into_iter().map(|(_, r)| r.summary).collect())
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn read(offset: u64, len: u64) -> HostRequest {
    HostRequest::Io(HostIo {
        op: HostOp::Read,
        offset,
        len,
    })
}

fn write(offset: u64, len: u64) -> HostRequest {
    HostRequest::Io(HostIo {
        op: HostOp::Write,
        offset,
        len,
    })
}

// 1 ------------------------------------------------------------------------

fn latency_oracle() -> Outcome {
    let started = Instant::now();
    let cfg = config("preset = \"tiny\"\n[device.icl]\nenabled = false\n");
    let d = cfg.device();

    // Hand-computed stage sum from the configured parameters.
    let ns = |x: f64| (x * 1000.0).round() as u64;
    let fw = &d.firmware_latency;
    let t = &d.timing;
    let mhz = t.channel_mhz as u64;
    assert_eq!(mhz as f64, t.channel_mhz);
    let bus_cycles = |c: u64| (c * 1_000_000).div_ceil(mhz);
    let bytes_per_cycle = (t.bus_width_bits / 8) as u64 * if t.ddr { 2 } else { 1 };
    let flash_cmd = bus_cycles(t.command_cycles as u64);
    let flash_xfer = bus_cycles(4096 / bytes_per_cycle);

    let dr = &d.dram;
    let beats = dr.burst_bytes as u64 / (dr.chips * dr.bus_width_bits / 8) as u64;
    let burst_cycles = beats / if dr.ddr { 2 } else { 1 };
    let burst = burst_cycles * 1_000_000 / dr.io_mhz as u64;
    let bursts = 4096 / dr.burst_bytes as u64;
    // Fresh banks: activate then CAS, then the bursts back to back. The
    // read that follows hits the rows the write opened.
    let dram_write = ns(dr.t_rcd_ns) + ns(dr.t_cl_ns) + bursts * burst;
    let dram_read = ns(dr.t_cl_ns) + bursts * burst;

    let i = &d.interface;
    // 4096 B over lanes * GT/s with 128b/130b coding, in ps.
    let gts = i.pcie_gts as u64;
    let link = (4096 * 8 * 130 * 1000u64).div_ceil(i.pcie_lanes as u64 * gts * 128) + ns(i.per_segment_overhead_ns);

    let mut sim = Simulator::new(d, cfg.seed).map_err(|e| e.to_string())?;
    sim.precondition(Precondition::Fill).map_err(|e| e.to_string())?;
    let addr = sim.ssd.be.ftl.resolve(0, 0).ok_or("LBA 0 unmapped after fill")?;
    let t_r = if addr.page % 2 == 1 { ns(t.t_read_slow_us * 1000.0) } else { ns(t.t_read_fast_us * 1000.0) };

    let expected = ns(fw.command_fetch_ns)
        + ns(fw.hil_per_request_ns)
        + ns(fw.ftl_translate_ns)
        + ns(fw.fil_schedule_ns)
        + flash_cmd
        + t_r
        + flash_xfer
        + dram_write
        + dram_read.max(link)
        + ns(fw.cq_post_ns)
        + ns(fw.msi_ns);

    sim.set_source(Source::Script(VecDeque::from([read(0, 4096)])), 1);
    sim.run().map_err(|e| e.to_string())?;
    let out = sim.finish();
    let got = out.records[0].latency().as_ps();
    let elapsed = started.elapsed().as_secs_f64();
    ensure(got == expected, || format!("latency {got} ps, oracle {expected} ps"))?;
    ensure(elapsed < 1.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!("{expected} ps exact, {elapsed:.3} s"))
}

// 2 ------------------------------------------------------------------------

fn qd_saturation() -> Outcome {
    let started = Instant::now();
    let cfg = ExperimentConfig::preset("intel750-like").map_err(|e| e.to_string())?;
    let s = summaries(&cfg)?;
    let bw: Vec<f64> = s.iter().map(|x| x.bandwidth_mb_s).collect();
    let lat: Vec<f64> = s.iter().map(|x| x.lat_mean_us).collect();
    let elapsed = started.elapsed().as_secs_f64();
    ensure(bw.len() == 6, || format!("{} points", bw.len()))?;
    ensure(bw.windows(2).all(|w| w[1] >= w[0]), || format!("bandwidth not monotone {}", fmt(&bw)))?;
    ensure(bw[5] / bw[0] < 32.0, || format!("not sublinear {}", fmt(&bw)))?;
    ensure((bw[5] / bw[4] - 1.0).abs() <= 0.10, || format!("QD32 not within 10% of QD16 {}", fmt(&bw)))?;
    ensure(lat.windows(2).all(|w| w[1] >= w[0]), || format!("latency not monotone {}", fmt(&lat)))?;
    ensure(elapsed < 300.0, || format!("took {elapsed:.0} s"))?;
    Ok(format!("MiB/s {} mean us {}, {elapsed:.1} s", fmt(&bw), fmt(&lat)))
}

// 3 ------------------------------------------------------------------------

fn channel_scaling() -> Outcome {
    const LINK_MB_S: f64 = 400.0;
    let cfg = config(&format!(
        r#"
preset = "tiny"
[device.geometry]
channels = 1
packages_per_channel = 1
dies_per_package = 1
planes_per_die = 1
blocks_per_plane = 64
pages_per_block = 64
page_size_bytes = 16384
[device.dram]
size_mb = 64
[device.icl]
enabled = false
[device.interface]
link_mb_s = {LINK_MB_S}
[workload]
pattern = "seqread"
block_bytes = 131072
queue_depth = 8
total_ops = 600
precondition = "fill"
payload = "zero"
verify = false
[sweep]
"device.geometry.channels" = [1, 2, 4, 8]
"#
    ));
    let bw: Vec<f64> = summaries(&cfg)?.iter().map(|s| s.bandwidth_mb_s).collect();
    let ceiling = LINK_MB_S * 1e6 / (1u64 << 20) as f64;
    let bound = |x: f64| x >= 0.98 * ceiling;
    let mut scaled = 0;
    let mut flat = 0;
    for i in 1..bw.len() {
        if bound(bw[i]) {
            ensure((bw[i] / ceiling - 1.0).abs() <= 0.02, || {
                format!("point {i} off the {ceiling:.1} MiB/s ceiling: {}", fmt(&bw))
            })?;
            flat += 1;
        } else {
            ensure(flat == 0, || format!("bandwidth left the ceiling: {}", fmt(&bw)))?;
            ensure(bw[i] / bw[i - 1] >= 1.8, || format!("doubling {i} scaled < 1.8x: {}", fmt(&bw)))?;
            scaled += 1;
        }
    }
    ensure(scaled >= 1 && flat >= 1, || {
        format!("sweep must show both scaling and the ceiling: {}", fmt(&bw))
    })?;
    Ok(format!("MiB/s {} vs ceiling {ceiling:.1}", fmt(&bw)))
}

// 4 ------------------------------------------------------------------------

fn op_sweep() -> Outcome {
    let cfg = config(
        r#"
preset = "tiny"
[device.geometry]
channels = 1
packages_per_channel = 1
dies_per_package = 1
planes_per_die = 1
blocks_per_plane = 256
pages_per_block = 64
page_size_bytes = 4096
[workload]
pattern = "randwrite"
block_bytes = 4096
queue_depth = 8
total_ops = 40000
precondition = "stress"
payload = "zero"
verify = false
[sweep]
"device.ftl.op_ratio" = [0.20, 0.15, 0.10, 0.05]
"#,
    );
    let s = summaries(&cfg)?;
    let bw: Vec<f64> = s.iter().map(|x| x.bandwidth_mb_s).collect();
    let gc: Vec<u64> = s.iter().map(|x| x.gc_invocations).collect();
    ensure(bw.windows(2).all(|w| w[1] < w[0]), || format!("bandwidth not strictly decreasing {}", fmt(&bw)))?;
    ensure(gc.windows(2).all(|w| w[1] > w[0]), || format!("GC invocations not strictly increasing {gc:?}"))?;
    ensure(bw[3] < 0.5 * bw[0], || format!("OP 5% not below half of OP 20% {}", fmt(&bw)))?;
    Ok(format!("MiB/s {} GC {gc:?}", fmt(&bw)))
}

// 5 ------------------------------------------------------------------------

fn payload_for(slpn: u64, version: u64, len: usize) -> Box<[u8]> {
    let mut b = vec![0u8; len];
    b[0..8].copy_from_slice(&slpn.to_le_bytes());
    b[8..16].copy_from_slice(&version.to_le_bytes());
    let mut x = slpn.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ version;
    for chunk in b[16..].chunks_mut(8) {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        chunk.copy_from_slice(&x.to_le_bytes()[..chunk.len()]);
    }
    b.into_boxed_slice()
}

fn ftl_shadow() -> Outcome {
    const OPS: u64 = 1_000_000;
    let d = ExperimentConfig::preset("tiny").map_err(|e| e.to_string())?.device().clone();
    let g = d.geometry().clone();
    let mut flash = FlashBackend::new(g.clone(), d.timing.to_params());
    flash.enable_log();
    let mut ftl = Ftl::new(d.ftl.clone(), &g).map_err(|e| e.to_string())?;
    ensure(ftl.slots() == 1, || "tiny has one slot per super-page".into())?;
    let page = g.page_size_bytes as usize;
    let n = ftl.logical_superpages();
    let full = SlotMask::full(1);

    let mut current: Vec<Option<u64>> = vec![None; n as usize];
    let mut location: Vec<Option<FlashAddress>> = vec![None; n as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0005);
    let mut at = SimTime::ZERO;
    let mut version = 0u64;
    let (mut host_writes, mut logged_programs, mut reads_checked) = (0u64, 0u64, 0u64);

    for _ in 0..OPS {
        let slpn = rng.gen_range(0..n);
        let roll = rng.gen_range(0..100);
        // GC inside a write may still migrate the version it replaces.
        let mut replaced = None;
        if roll < 50 {
            version += 1;
            replaced = current[slpn as usize];
            current[slpn as usize] = Some(version);
            let w = ftl
                .write(&mut flash, slpn, vec![Some(payload_for(slpn, version, page))], at)
                .map_err(|e| e.to_string())?;
            host_writes += 1;
            at = at.max(w.done_at);
        } else if roll < 85 {
            let r = ftl.read_slots(&mut flash, slpn, &full, at).map_err(|e| e.to_string())?;
            let resolved = ftl.resolve(slpn, 0);
            ensure(resolved == location[slpn as usize], || {
                format!("slpn {slpn}: resolved {resolved:?}, shadow {:?}", location[slpn as usize])
            })?;
            let expected = current[slpn as usize].map(|v| payload_for(slpn, v, page));
            ensure(r[0].data == expected, || format!("slpn {slpn}: payload differs from the content store"))?;
            at = at.max(r[0].ready_at);
            reads_checked += 1;
        } else {
            ftl.invalidate(slpn, at).map_err(|e| e.to_string())?;
            current[slpn as usize] = None;
            location[slpn as usize] = None;
        }
        // Every program in the transaction log moves one page; its header
        // names the owner, which must be that page's newest version.
        for txn in flash.take_log() {
            if txn.kind != TxnKind::Program {
                continue;
            }
            logged_programs += 1;
            let data = flash.stored(&txn.address).ok_or("programmed page holds no payload")?;
            let owner = u64::from_le_bytes(data[0..8].try_into().unwrap());
            let v = u64::from_le_bytes(data[8..16].try_into().unwrap());
            let live = current[owner as usize] == Some(v) || (owner == slpn && replaced == Some(v));
            ensure(live, || format!("program of stale or trimmed data: slpn {owner} version {v}"))?;
            location[owner as usize] = Some(txn.address);
        }
    }
    let wa_log = logged_programs as f64 / host_writes as f64;
    let wa = ftl.write_amplification();
    ensure(wa == wa_log, || format!("FTL WA {wa} vs transaction log {wa_log}"))?;
    ensure(flash.stats().programs == logged_programs, || "flash counters disagree with the log".into())?;
    Ok(format!(
        "{OPS} ops, {reads_checked} reads checked, WA {wa:.4}, {} GC invocations",
        ftl.stats().gc_invocations
    ))
}

// 6 ------------------------------------------------------------------------

fn victim_oracles() -> Outcome {
    let d = config(
        r#"
preset = "tiny"
[device.geometry]
channels = 2
packages_per_channel = 1
dies_per_package = 1
planes_per_die = 2
blocks_per_plane = 40
pages_per_block = 8
page_size_bytes = 4096
"#,
    )
    .device()
    .clone();
    let g = d.geometry().clone();
    let slots = g.total_planes();
    let capacity = slots * g.pages_per_block;
    let (mut agree, mut candidates_seen) = (0, 0u64);
    for pop in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(pop);
        let mut flash = FlashBackend::new(g.clone(), d.timing.to_params());
        flash.set_timed(false);
        let mut ftl = Ftl::new(d.ftl.clone(), &g).map_err(|e| e.to_string())?;
        let n = ftl.logical_superpages();
        let hot = rng.gen_range(1..=n);
        let mut at = SimTime::ZERO;
        for _ in 0..rng.gen_range(10..400) {
            at += SimTime::from_ns(rng.gen_range(1..5_000_000));
            let slpn = rng.gen_range(0..hot);
            match rng.gen_range(0..10) {
                0..=5 => {
                    ftl.write(&mut flash, slpn, vec![None; slots as usize], at)
                        .map_err(|e| e.to_string())?;
                }
                6..=8 => {
                    let dirty = SlotMask::from_slots(slots, [rng.gen_range(0..slots)]);
                    let present = dirty.clone();
                    ftl.update(&mut flash, slpn, &dirty, &present, vec![None; slots as usize], at)
                        .map_err(|e| e.to_string())?;
                }
                _ => ftl.invalidate(slpn, at).map_err(|e| e.to_string())?,
            }
        }
        let now = at + SimTime::from_ns(rng.gen_range(0..10_000_000));
        let closed: Vec<(u32, u32, u32, SimTime)> = (0..ftl.super_blocks())
            .filter_map(|id| {
                let b = ftl.block_meta(id);
                (b.state == BlockState::Closed).then_some((id, b.valid_count, b.erase_count, b.last_modified))
            })
            .collect();
        candidates_seen += closed.len() as u64;

        let mut greedy: Option<(u32, u32, u32)> = None;
        for &(id, v, e, _) in &closed {
            if greedy.is_none_or(|(bv, be, bid)| (v, e, id) < (bv, be, bid)) {
                greedy = Some((v, e, id));
            }
        }
        let greedy = greedy.map(|g| g.2);

        // Exact age * (1 - u) / (2u); None stands for u = 0 (infinite).
        let score = |v: u32, last: SimTime| -> Option<BigRational> {
            if v == 0 {
                return None;
            }
            let age = BigRational::from_integer(BigInt::from(now.saturating_sub(last).as_ps()));
            let u = BigRational::new(BigInt::from(v), BigInt::from(capacity));
            let one = BigRational::from_integer(BigInt::from(1));
            let two = BigRational::from_integer(BigInt::from(2));
            Some(age * (one - u.clone()) / (two * u))
        };
        let mut best: Option<(Option<BigRational>, u32, u32)> = None;
        for &(id, v, e, last) in &closed {
            let s = score(v, last);
            let better = match &best {
                None => true,
                Some((bs, be, bid)) => match (&s, bs) {
                    (None, Some(_)) => true,
                    (Some(_), None) => false,
                    (None, None) => (e, id) < (*be, *bid),
                    (Some(a), Some(b)) => a > b || (a == b && (e, id) < (*be, *bid)),
                },
            };
            if better {
                best = Some((s, e, id));
            }
        }
        let cost_benefit = best.map(|b| b.2);

        let got_g = ftl.select_victim_greedy();
        let got_c = ftl.select_victim_costbenefit(now);
        ensure(got_g == greedy, || format!("population {pop}: greedy {got_g:?}, oracle {greedy:?}"))?;
        ensure(got_c == cost_benefit, || {
            format!("population {pop}: cost-benefit {got_c:?}, oracle {cost_benefit:?}")
        })?;
        agree += 1;
    }
    ensure(candidates_seen > 0, || "no population had candidates".into())?;
    Ok(format!("{agree}/1000 populations agree ({candidates_seen} candidate blocks)"))
}

// 7 ------------------------------------------------------------------------

fn partial_write() -> Outcome {
    const N: u64 = 256;
    let base = config(
        r#"
preset = "tiny"
[device.geometry]
channels = 2
packages_per_channel = 2
dies_per_package = 1
planes_per_die = 2
blocks_per_plane = 64
pages_per_block = 32
page_size_bytes = 4096
"#,
    );
    let run = |exception_path: bool| -> Result<(u64, u64, u64, u32), String> {
        let mut d = base.device().clone();
        d.ftl.exception_path = exception_path;
        let mut sim = Simulator::new(&d, 1).map_err(|e| e.to_string())?;
        sim.precondition(Precondition::Fill).map_err(|e| e.to_string())?;
        let slots = sim.ssd.slots();
        let stride = slots as u64 * sim.ssd.page_bytes();
        let script: VecDeque<_> = (0..N).map(|k| write(k * stride, 4096)).collect();
        sim.set_source(Source::Script(script), 4);
        sim.run().map_err(|e| e.to_string())?;
        let c = sim.finish().counters;
        Ok((c.flash.programs, c.flash.reads, c.ftl.gc_invocations, slots))
    };
    let (on_p, on_r, on_gc, g) = run(true)?;
    let (off_p, off_r, off_gc, _) = run(false)?;
    let g64 = g as u64;
    ensure(on_gc == 0 && off_gc == 0, || "GC ran during the storm".into())?;
    ensure(on_p == N && on_r == 0, || format!("exception path: {on_p} programs, {on_r} reads"))?;
    ensure(off_p == N * g64 && off_r == N * (g64 - 1), || {
        format!("read-modify-write: {off_p} programs, {off_r} reads")
    })?;
    let ratio = (off_p + off_r) as f64 / (on_p + on_r) as f64;
    ensure(ratio >= g as f64 / 2.0, || format!("OFF/ON ratio {ratio}"))?;
    Ok(format!("ON {on_p} programs 0 reads; OFF {off_p} programs {off_r} reads; ratio {ratio:.1} (slots {g})"))
}

// 8 ------------------------------------------------------------------------

fn readahead() -> Outcome {
    let d = config(
        r#"
preset = "tiny"
[device.geometry]
channels = 4
packages_per_channel = 2
dies_per_package = 1
planes_per_die = 1
blocks_per_plane = 32
pages_per_block = 32
page_size_bytes = 4096
[device.icl]
lines = 64
readahead = true
readahead_threshold = 3
"#,
    )
    .device()
    .clone();
    let mut ssd = build_ssd(&d).map_err(|e| e.to_string())?;
    let degree = ssd.icl.readahead_degree();
    ensure(degree == d.geometry().channels, || format!("degree {degree}"))?;
    ssd.be.flash.set_timed(false);
    ssd.be.ftl.sequential_fill(&mut ssd.be.flash, SimTime::ZERO).map_err(|e| e.to_string())?;
    ssd.be.flash.set_timed(true);
    let full = SlotMask::full(ssd.slots());
    let mut at = SimTime::ZERO;
    let (mut hits, mut accesses) = (0u64, 0u64);
    for slpn in 0..400u64 {
        let r = ssd.icl.read(&mut ssd.be, slpn, &full, at).map_err(|e| e.to_string())?;
        at = r.ready_at;
        if slpn >= 4 {
            accesses += 1;
            hits += r.hit as u64;
        }
    }
    let ratio = hits as f64 / accesses as f64;
    let plans = ssd.icl.take_prefetch_log();
    ensure(!plans.is_empty(), || "no prefetch issued".into())?;
    for p in &plans {
        let mut ch: Vec<u32> = p.addresses.iter().map(|a| a.channel).collect();
        ch.sort_unstable();
        ch.dedup();
        ensure(ch.len() == degree as usize, || {
            format!("plan for slpn {} covers {} channels", p.slpn, ch.len())
        })?;
    }
    ensure(ratio > 0.9, || format!("hit ratio {ratio:.3}"))?;
    Ok(format!("hit ratio {ratio:.3} after 4 accesses, {} plans over {degree} channels", plans.len()))
}

// 9 ------------------------------------------------------------------------

fn phase_tags() -> Result<u64, String> {
    let mut runner = TestRunner::new(PtConfig {
        cases: 8,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let wraps = std::cell::Cell::new(0u64);
    runner
        .run(&(2u32..=16, any::<u64>()), |(entries, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mem = HostMemory::new();
            let admin = HostQueuePair::new(&mut mem, 0, 8);
            let mut host = HostQueuePair::new(&mut mem, 1, entries);
            let mut ctrl = NvmeController::new(Arbitration::Rr, admin.sq_base, admin.cq_base, 8);
            ctrl.create_cq(1, host.cq_base, entries).unwrap();
            ctrl.create_sq(1, host.sq_base, entries, 1, 1).unwrap();
            let mut cid: u16 = 0;
            let mut completed = 0u64;
            let mut outstanding: Vec<u16> = Vec::new();
            while completed < 101 * entries as u64 {
                let room = entries - 1 - outstanding.len() as u32;
                for _ in 0..rng.gen_range(0..=room) {
                    let tail = host.push(&mut mem, &SubmissionEntry::flush(cid)).unwrap();
                    ctrl.ring_sq(1, tail).unwrap();
                    outstanding.push(cid);
                    cid = cid.wrapping_add(1);
                }
                while let Some((_, sqe)) = ctrl.fetch(&mem).unwrap() {
                    prop_assert!(outstanding.contains(&sqe.cid));
                }
                // Complete a random subset in random order, then poll.
                let k = rng.gen_range(0..=outstanding.len());
                let mut done = Vec::new();
                for _ in 0..k {
                    let i = rng.gen_range(0..outstanding.len());
                    let c = outstanding.swap_remove(i);
                    prop_assert!(ctrl.complete(&mut mem, 1, c, Status::SUCCESS, c as u32).unwrap());
                    done.push(c);
                }
                let seen: Vec<u16> = host.poll(&mem).unwrap().iter().map(|e| e.cid).collect();
                prop_assert_eq!(&seen, &done);
                ctrl.ring_cq(&mut mem, 1, host.cq_head).unwrap();
                completed += k as u64;
            }
            wraps.set(wraps.get() + completed / entries as u64);
            prop_assert!(completed / entries as u64 >= 100);
            Ok(())
        })
        .map_err(|e| format!("phase tag: {e}"))?;
    Ok(wraps.get())
}

fn prp_walk() -> Result<(), String> {
    let mut runner = TestRunner::new(PtConfig {
        cases: 64,
        failure_persistence: None,
        ..PtConfig::default()
    });
    runner
        .run(&(1u64..=4 << 20, 0u64..HOST_PAGE / 4), |(len, off)| {
            let off = off * 4;
            let mut mem = HostMemory::new();
            let base = mem.alloc(len + off);
            let start = base + off;
            let (p1, p2, _) = build_prp_with_lists(&mut mem, start, len).unwrap();
            let walk = traverse_prp(&mem, p1, p2, len).unwrap();
            // Brute force: step through the buffer one host page at a time.
            let mut expect = Vec::new();
            let mut pos = start;
            let end = start + len;
            while pos < end {
                let page_end = (pos / HOST_PAGE + 1) * HOST_PAGE;
                let stop = page_end.min(end);
                expect.push((pos, stop - pos));
                pos = stop;
            }
            let got: Vec<(u64, u64)> = walk.segments.iter().map(|s| (s.addr, s.len)).collect();
            prop_assert_eq!(got, expect);
            Ok(())
        })
        .map_err(|e| format!("PRP walk: {e}"))
}

fn wrr_share() -> Result<(u32, u32), String> {
    let mut a = Arbiter::new(Arbitration::Wrr);
    a.add_queue(1, 3);
    a.add_queue(2, 1);
    a.publish(1, 1000);
    a.publish(2, 1000);
    let mut n = HashMap::new();
    for _ in 0..400 {
        *n.entry(a.next().ok_or("arbiter idle under backlog")?).or_insert(0u32) += 1;
    }
    let (q1, q2) = (n[&1], n[&2]);
    ensure(q1.abs_diff(300) <= 4 && q2.abs_diff(100) <= 4, || format!("WRR served {q1}:{q2}"))?;
    Ok((q1, q2))
}

fn round_trip() -> Result<u64, String> {
    let mut checked = 0;
    for (i, kind) in [InterfaceKind::Nvme, InterfaceKind::Sata, InterfaceKind::Ufs, InterfaceKind::Ocssd]
        .into_iter()
        .enumerate()
    {
        let mut d = ExperimentConfig::preset("tiny").map_err(|e| e.to_string())?.device().clone();
        d.interface.kind = kind;
        let mut sim = Simulator::new(&d, 100 + i as u64).map_err(|e| e.to_string())?;
        let spec = WorkloadSpec {
            pattern: Pattern::Mixed,
            read_ratio: 0.5,
            block_bytes: 16384,
            queue_depth: 8,
            total_ops: Some(800),
            range_bytes: Some(1 << 20),
            payload: PayloadKind::Pattern,
            verify: true,
            ..WorkloadSpec::default()
        };
        sim.configure(&spec).map_err(|e| e.to_string())?;
        sim.run().map_err(|e| e.to_string())?;
        let out = sim.finish();
        ensure(out.records.iter().all(|r| r.ok), || format!("{kind:?}: command failed"))?;
        ensure(out.checked_reads > 0 && out.verify_mismatches == 0, || {
            format!("{kind:?}: {} of {} reads differ", out.verify_mismatches, out.checked_reads)
        })?;
        checked += out.checked_reads;
    }
    Ok(checked)
}

fn protocol_suite() -> Outcome {
    let wraps = phase_tags()?;
    prp_walk()?;
    let (q1, q2) = wrr_share()?;
    let checked = round_trip()?;
    Ok(format!(
        "phase tags over {wraps} wraps; PRP walks exact; WRR {q1}:{q2}; {checked} reads byte-identical"
    ))
}

// 10 -----------------------------------------------------------------------

fn interface_ordering() -> Outcome {
    let mut base = config(
        r#"
preset = "fast-flash"
[workload]
pattern = "randread"
block_bytes = 4096
total_ops = 3000
precondition = "fill"
[sweep]
"workload.queue_depth" = [1, 2, 4, 8, 16, 32, 64]
"#,
    );
    let mut bw = HashMap::new();
    for kind in [InterfaceKind::Nvme, InterfaceKind::Sata, InterfaceKind::Ufs] {
        base.device_mut().interface.kind = kind;
        let pts = run_points(&base, 8).map_err(|e| e.to_string())?;
        if kind.is_htype() {
            let most = pts.iter().map(|(_, r)| r.output.max_outstanding).max().unwrap_or(0);
            ensure(most <= 32, || format!("{kind:?} held {most} commands"))?;
            ensure(most == 32, || format!("{kind:?} never filled its command list ({most})"))?;
        }
        bw.insert(kind, pts.iter().map(|(_, r)| r.summary.bandwidth_mb_s).collect::<Vec<_>>());
    }
    let (n, s) = (&bw[&InterfaceKind::Nvme], &bw[&InterfaceKind::Sata]);
    ensure(n.iter().zip(s).all(|(a, b)| a >= b), || format!("NVMe {} vs SATA {}", fmt(n), fmt(s)))?;
    Ok(format!("NVMe {} SATA {} UFS {}", fmt(n), fmt(s), fmt(&bw[&InterfaceKind::Ufs])))
}

// 11 -----------------------------------------------------------------------

fn ocssd_equivalence() -> Outcome {
    let base = config(
        r#"
preset = "tiny"
[device.geometry]
channels = 2
packages_per_channel = 2
dies_per_package = 1
planes_per_die = 2
blocks_per_plane = 32
pages_per_block = 16
page_size_bytes = 4096
"#,
    );
    let fill = |kind: InterfaceKind, superpages: Option<u64>| -> Result<_, String> {
        let mut d = base.device().clone();
        d.interface.kind = kind;
        let mut sim = Simulator::new(&d, 7).map_err(|e| e.to_string())?;
        let n = superpages.unwrap_or_else(|| sim.ssd.be.ftl.logical_superpages());
        let spec = WorkloadSpec {
            pattern: Pattern::SeqWrite,
            block_bytes: sim.ssd.slots() as u64 * sim.ssd.page_bytes(),
            queue_depth: 4,
            total_ops: Some(n),
            payload: PayloadKind::Zero,
            verify: false,
            ..WorkloadSpec::default()
        };
        sim.configure(&spec).map_err(|e| e.to_string())?;
        sim.ssd.be.flash.enable_log();
        sim.run().map_err(|e| e.to_string())?;
        let out = sim.finish();
        let mut txns: Vec<_> = out
            .flash_log
            .iter()
            .map(|t| (format!("{:?}", t.kind), t.address, t.payload_len))
            .collect();
        txns.sort_by_key(|t| (t.0.clone(), t.1.channel, t.1.way, t.1.die, t.1.plane, t.1.block, t.1.page, t.2));
        Ok((n, txns, out.counters))
    };
    let (n, nvme, nvme_c) = fill(InterfaceKind::Nvme, None)?;
    let (_, oc, oc_c) = fill(InterfaceKind::Ocssd, Some(n))?;
    ensure(nvme_c.ftl.host_page_writes > 0, || "NVMe fill bypassed the FTL".into())?;
    ensure(oc_c.ftl == Default::default(), || format!("open-channel FTL activity {:?}", oc_c.ftl))?;
    ensure(oc_c.icl == Default::default(), || format!("open-channel ICL activity {:?}", oc_c.icl))?;
    ensure(nvme.len() == oc.len(), || format!("{} vs {} transactions", nvme.len(), oc.len()))?;
    ensure(nvme == oc, || "transaction multisets differ".into())?;
    Ok(format!("{n} super-pages, {} identical transactions, zero FTL/ICL ops", nvme.len()))
}

// 12 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut files = 0;
    for (name, _) in PRESETS {
        let cfg = ExperimentConfig::preset(name).map_err(|e| e.to_string())?;
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (_, ma) = run_to_dir(&cfg, a.path(), 4).map_err(|e| e.to_string())?;
        run_to_dir(&cfg, b.path(), 1).map_err(|e| e.to_string())?;
        for f in ma.outputs.iter().filter(|f| {
            matches!(f.extension().and_then(|e| e.to_str()), Some("csv") | Some("json"))
        }) {
            let x = std::fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{name}: {} differs between runs", f.display()))?;
            files += 1;
        }
    }
    ensure(files >= 2 * PRESETS.len(), || format!("only {files} report files compared"))?;
    Ok(format!("{} presets, {files} report files byte-identical", PRESETS.len()))
}

// 13 -----------------------------------------------------------------------

fn wear_leveling() -> Outcome {
    let d = ExperimentConfig::preset("tiny").map_err(|e| e.to_string())?.device().clone();
    let mut sim = Simulator::new(&d, 13).map_err(|e| e.to_string())?;
    let spec = WorkloadSpec {
        pattern: Pattern::RandWrite,
        block_bytes: 4096,
        queue_depth: 4,
        total_ops: Some(1_000_000),
        payload: PayloadKind::Zero,
        verify: false,
        ..WorkloadSpec::default()
    };
    sim.configure(&spec).map_err(|e| e.to_string())?;
    sim.precondition(Precondition::Fill).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let out = sim.finish();
    let e = &out.counters.erase_counts;
    let (lo, hi) = (*e.iter().min().unwrap(), *e.iter().max().unwrap());
    ensure(out.records.len() == 1_000_000, || format!("{} writes completed", out.records.len()))?;
    ensure(hi - lo <= 4, || format!("erase counts span {lo}..={hi}"))?;
    Ok(format!("erase counts {lo}..={hi} after 10^6 writes"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("analytic latency oracle", latency_oracle),
        ("queue-depth saturation", qd_saturation),
        ("channel parallelism scaling", channel_scaling),
        ("over-provisioning sweep", op_sweep),
        ("FTL shadow-map equivalence", ftl_shadow),
        ("GC victim oracles", victim_oracles),
        ("partial-write exception path", partial_write),
        ("readahead efficacy", readahead),
        ("protocol properties", protocol_suite),
        ("interface ordering", interface_ordering),
        ("open-channel passive equivalence", ocssd_equivalence),
        ("determinism", determinism),
        ("wear leveling", wear_leveling),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let results: Vec<(usize, &str, Outcome, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .enumerate()
            .filter(|(i, _)| wanted.is_empty() || wanted.contains(&(i + 1)))
            .map(|(i, (name, f))| {
                let f = *f;
                (
                    i + 1,
                    *name,
                    s.spawn(move || {
                        let t = Instant::now();
                        let r = f();
                        (r, t.elapsed().as_secs_f64())
                    }),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(i, name, h)| match h.join() {
                Ok((r, t)) => (i, name, r, t),
                Err(p) => {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    (i, name, Err(format!("panicked: {msg}")), 0.0)
                }
            })
            .collect()
    });
    let mut failed = 0;
    for (i, name, r, t) in &results {
        match r {
            Ok(detail) => println!("PASS {i:>2} {name}: {detail} [{t:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {i:>2} {name}: {why} [{t:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
