//! Pointer-list traversal: NVMe PRP lists and SATA/UFS PRDTs.

use super::{HostMemory, ProtocolError, HOST_PAGE};

/// A contiguous piece of host memory taking part in one transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub addr: u64,
    pub len: u64,
}

/// Result of walking a PRP pair: data segments plus the number of list
/// pages the device had to read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrpWalk {
    pub segments: Vec<Segment>,
    pub list_pages: u32,
}

/// Walks `prp1`/`prp2` for a `total`-byte transfer.
///
/// `prp1` may start anywhere in a page. When the rest fits in one page `prp2`
/// is that page; otherwise `prp2` points at a list of page pointers whose
/// last slot chains to the next list page while data remains.
pub fn traverse_prp(mem: &HostMemory, prp1: u64, prp2: u64, total: u64) -> Result<PrpWalk, ProtocolError> {
    let mut segments = Vec::new();
    if total == 0 {
        return Ok(PrpWalk { segments, list_pages: 0 });
    }
    let first = total.min(HOST_PAGE - prp1 % HOST_PAGE);
    segments.push(Segment { addr: prp1, len: first });
    let mut remaining = total - first;
    if remaining == 0 {
        return Ok(PrpWalk { segments, list_pages: 0 });
    }
    if remaining <= HOST_PAGE {
        if !prp2.is_multiple_of(HOST_PAGE) {
            return Err(ProtocolError::UnalignedPrp(prp2));
        }
        segments.push(Segment { addr: prp2, len: remaining });
        return Ok(PrpWalk { segments, list_pages: 0 });
    }
    if !prp2.is_multiple_of(8) {
        return Err(ProtocolError::UnalignedPrp(prp2));
    }
    let mut list = prp2;
    let mut list_pages = 1;
    loop {
        let page_end = (list / HOST_PAGE + 1) * HOST_PAGE;
        let entry = mem.read_u64(list)?;
        let is_last_slot = list + 8 == page_end;
        if is_last_slot && remaining > HOST_PAGE {
            // chain pointer to the next list page
            if entry % 8 != 0 || entry == 0 {
                return Err(ProtocolError::UnalignedPrp(entry));
            }
            list = entry;
            list_pages += 1;
            continue;
        }
        if entry == 0 {
            return Err(ProtocolError::TransferLength {
                covered: total - remaining,
                needed: total,
            });
        }
        if entry % HOST_PAGE != 0 {
            return Err(ProtocolError::UnalignedPrp(entry));
        }
        let len = remaining.min(HOST_PAGE);
        segments.push(Segment { addr: entry, len });
        remaining -= len;
        if remaining == 0 {
            return Ok(PrpWalk { segments, list_pages });
        }
        list += 8;
    }
}

/// Host-side helper: describes a buffer of `len` bytes at `buf` (contiguous
/// pages) with PRP entries, allocating list pages as needed.
pub fn build_prp(mem: &mut HostMemory, buf: u64, len: u64) -> Result<(u64, u64), ProtocolError> {
    build_prp_with_lists(mem, buf, len).map(|(p1, p2, _)| (p1, p2))
}

/// Like [`build_prp`], also returning the list pages so the caller can free
/// them once the command completes.
pub fn build_prp_with_lists(
    mem: &mut HostMemory,
    buf: u64,
    len: u64,
) -> Result<(u64, u64, Vec<u64>), ProtocolError> {
    let first = len.min(HOST_PAGE - buf % HOST_PAGE);
    let rest = len - first;
    let next_page = (buf / HOST_PAGE + 1) * HOST_PAGE;
    if rest == 0 {
        return Ok((buf, 0, Vec::new()));
    }
    if rest <= HOST_PAGE {
        return Ok((buf, next_page, Vec::new()));
    }
    let pages: Vec<u64> = (0..rest.div_ceil(HOST_PAGE))
        .map(|i| next_page + i * HOST_PAGE)
        .collect();
    let per_list = (HOST_PAGE / 8) as usize;
    // each list page holds 511 data pointers plus a chain slot, except the last
    let mut lists = Vec::new();
    let mut i = 0;
    while i < pages.len() {
        let left = pages.len() - i;
        let take = if left <= per_list { left } else { per_list - 1 };
        lists.push(pages[i..i + take].to_vec());
        i += take;
    }
    let bases: Vec<u64> = lists.iter().map(|_| mem.alloc(HOST_PAGE)).collect();
    for (k, entries) in lists.iter().enumerate() {
        for (j, p) in entries.iter().enumerate() {
            mem.write_u64(bases[k] + 8 * j as u64, *p)?;
        }
        if k + 1 < lists.len() {
            mem.write_u64(bases[k] + HOST_PAGE - 8, bases[k + 1])?;
        }
    }
    Ok((buf, bases[0], bases))
}

/// SGL descriptor type of a data block, the only kind accepted.
pub const SGL_DATA_BLOCK: u8 = 0x0;

/// Encodes one SGL data-block descriptor into the two data-pointer words.
pub fn sgl_pointer(addr: u64, len: u32) -> (u64, u64) {
    (addr, len as u64 | (SGL_DATA_BLOCK as u64) << 60)
}

/// Decodes a data pointer holding a single SGL descriptor. Segment, bit
/// bucket and keyed descriptors are refused.
pub fn traverse_sgl(dptr1: u64, dptr2: u64, total: u64) -> Result<Vec<Segment>, ProtocolError> {
    let kind = (dptr2 >> 60) as u8;
    if kind != SGL_DATA_BLOCK {
        return Err(ProtocolError::UnsupportedSgl(kind));
    }
    let len = dptr2 & 0xffff_ffff;
    if len < total {
        return Err(ProtocolError::TransferLength { covered: len, needed: total });
    }
    if total == 0 {
        return Ok(Vec::new());
    }
    Ok(vec![Segment { addr: dptr1, len: total }])
}

/// Bytes of one encoded PRDT entry: address, reserved, byte count - 1.
pub const PRDT_ENTRY: u64 = 16;

pub fn write_prdt_entry(mem: &mut HostMemory, at: u64, seg: Segment) -> Result<(), ProtocolError> {
    let mut b = [0u8; PRDT_ENTRY as usize];
    b[0..8].copy_from_slice(&seg.addr.to_le_bytes());
    b[12..16].copy_from_slice(&((seg.len - 1) as u32).to_le_bytes());
    mem.write(at, &b)
}

/// Reads `entries` descriptors at `table` until `total` bytes are covered.
pub fn traverse_prdt(mem: &HostMemory, table: u64, entries: u32, total: u64) -> Result<Vec<Segment>, ProtocolError> {
    let mut out = Vec::new();
    let mut covered = 0;
    for i in 0..entries as u64 {
        if covered >= total {
            break;
        }
        let mut b = [0u8; PRDT_ENTRY as usize];
        mem.read(table + i * PRDT_ENTRY, &mut b)?;
        let addr = u64::from_le_bytes(b[0..8].try_into().unwrap());
        let count = (u32::from_le_bytes(b[12..16].try_into().unwrap()) & 0x3f_ffff) as u64 + 1;
        let len = count.min(total - covered);
        out.push(Segment { addr, len });
        covered += len;
    }
    if covered < total {
        return Err(ProtocolError::TransferLength { covered, needed: total });
    }
    Ok(out)
}
