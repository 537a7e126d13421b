//! Open-channel addressing: physical page addresses packed into 64-bit
//! words, and the geometry / chunk report served to the host.
//!
//! Field order from the least significant bit: page (sector), chunk
//! (block), parallel unit, group (channel). A parallel unit enumerates
//! (way, die, plane) with plane fastest.

use crate::flash::{FlashAddress, FlashGeometry, FlashTimingParams};

fn bits(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PpaFormat {
    pub page_bits: u32,
    pub chunk_bits: u32,
    pub pu_bits: u32,
    pub group_bits: u32,
}

impl PpaFormat {
    pub fn for_geometry(g: &FlashGeometry) -> Self {
        PpaFormat {
            page_bits: bits(g.pages_per_block),
            chunk_bits: bits(g.blocks_per_plane),
            pu_bits: bits(pus_per_group(g)),
            group_bits: bits(g.channels),
        }
    }

    pub fn pack(&self, g: &FlashGeometry, a: &FlashAddress) -> u64 {
        let pu = (a.way * g.dies_per_package + a.die) * g.planes_per_die + a.plane;
        let mut v = a.channel as u64;
        v = (v << self.pu_bits) | pu as u64;
        v = (v << self.chunk_bits) | a.block as u64;
        (v << self.page_bits) | a.page as u64
    }

    /// Decodes a packed address; `None` if any field is out of range.
    pub fn unpack(&self, g: &FlashGeometry, ppa: u64) -> Option<FlashAddress> {
        let take = |v: &mut u64, n: u32| {
            let x = *v & ((1u64 << n) - 1);
            *v >>= n;
            x as u32
        };
        let mut v = ppa;
        let page = take(&mut v, self.page_bits);
        let block = take(&mut v, self.chunk_bits);
        let pu = take(&mut v, self.pu_bits);
        let channel = take(&mut v, self.group_bits);
        if v != 0 || pu >= pus_per_group(g) {
            return None;
        }
        let plane = pu % g.planes_per_die;
        let die = pu / g.planes_per_die % g.dies_per_package;
        let way = pu / g.planes_per_die / g.dies_per_package;
        let a = FlashAddress {
            channel,
            way,
            die,
            plane,
            block,
            page,
        };
        g.check(&a).ok().map(|_| a)
    }
}

pub fn pus_per_group(g: &FlashGeometry) -> u32 {
    g.packages_per_channel * g.dies_per_package * g.planes_per_die
}

/// Geometry report returned by the admin geometry command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeometryReport {
    pub groups: u32,
    pub pus_per_group: u32,
    pub chunks_per_pu: u32,
    pub pages_per_chunk: u32,
    pub page_bytes: u32,
    pub read_ns: u32,
    pub program_ns: u32,
    pub erase_ns: u32,
    pub format: PpaFormat,
}

pub const GEOMETRY_BYTES: usize = 64;

impl GeometryReport {
    pub fn new(g: &FlashGeometry, t: &FlashTimingParams) -> Self {
        GeometryReport {
            groups: g.channels,
            pus_per_group: pus_per_group(g),
            chunks_per_pu: g.blocks_per_plane,
            pages_per_chunk: g.pages_per_block,
            page_bytes: g.page_size_bytes,
            read_ns: t.t_read_slow.as_ns_f64().round() as u32,
            program_ns: t.t_prog_slow.as_ns_f64().round() as u32,
            erase_ns: t.t_erase.as_ns_f64().round() as u32,
            format: PpaFormat::for_geometry(g),
        }
    }

    pub fn encode(&self) -> [u8; GEOMETRY_BYTES] {
        let mut b = [0u8; GEOMETRY_BYTES];
        let words = [
            self.groups,
            self.pus_per_group,
            self.chunks_per_pu,
            self.pages_per_chunk,
            self.page_bytes,
            self.read_ns,
            self.program_ns,
            self.erase_ns,
            self.format.page_bits,
            self.format.chunk_bits,
            self.format.pu_bits,
            self.format.group_bits,
        ];
        for (i, w) in words.iter().enumerate() {
            b[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
        }
        b
    }

    pub fn decode(b: &[u8; GEOMETRY_BYTES]) -> Self {
        let w = |i: usize| u32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap());
        GeometryReport {
            groups: w(0),
            pus_per_group: w(1),
            chunks_per_pu: w(2),
            pages_per_chunk: w(3),
            page_bytes: w(4),
            read_ns: w(5),
            program_ns: w(6),
            erase_ns: w(7),
            format: PpaFormat {
                page_bits: w(8),
                chunk_bits: w(9),
                pu_bits: w(10),
                group_bits: w(11),
            },
        }
    }
}

/// One chunk-information record: erase count and write pointer.
pub const CHUNK_INFO_BYTES: usize = 16;

pub fn encode_chunk_info(erase_count: u32, write_pointer: u32, ppa: u64) -> [u8; CHUNK_INFO_BYTES] {
    let mut b = [0u8; CHUNK_INFO_BYTES];
    b[0..4].copy_from_slice(&erase_count.to_le_bytes());
    b[4..8].copy_from_slice(&write_pointer.to_le_bytes());
    b[8..16].copy_from_slice(&ppa.to_le_bytes());
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flash::mlc_table_timings;

    fn g() -> FlashGeometry {
        FlashGeometry {
            channels: 12,
            packages_per_channel: 5,
            dies_per_package: 1,
            planes_per_die: 2,
            blocks_per_plane: 512,
            pages_per_block: 512,
            page_size_bytes: 16384,
        }
    }

    #[test]
    fn ppa_round_trip_every_slot() {
        let g = g();
        let f = PpaFormat::for_geometry(&g);
        assert_eq!((f.page_bits, f.chunk_bits, f.pu_bits, f.group_bits), (9, 9, 4, 4));
        for slot in 0..g.total_planes() {
            let a = g.slot_address(slot, 511, 17);
            assert_eq!(f.unpack(&g, f.pack(&g, &a)), Some(a));
        }
        // pu 10 does not exist with 5 packages x 2 planes
        assert_eq!(f.unpack(&g, 10 << 18), None);
    }

    #[test]
    fn geometry_report_round_trip() {
        let r = GeometryReport::new(&g(), &mlc_table_timings());
        assert_eq!(GeometryReport::decode(&r.encode()), r);
        assert_eq!(r.erase_ns, 3_000_000);
    }
}
