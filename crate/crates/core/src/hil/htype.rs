//! Host-controller command list shared by SATA (NCQ) and UFS (UTP
//! transfer requests): 32 slots, served first-in first-out.

use std::collections::VecDeque;

use super::{ProtocolError, HTYPE_SLOTS};

/// A command as the host controller sees it: the frame / descriptor fields
/// plus where its PRDT lives in host memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HtypeCommand {
    pub tag: u64,
    pub write: bool,
    pub slba: u64,
    pub sectors: u32,
    pub prdt: u64,
    pub prdt_entries: u32,
}

#[derive(Debug)]
pub struct CommandList {
    slots: Vec<Option<HtypeCommand>>,
    fifo: VecDeque<usize>,
}

impl Default for CommandList {
    fn default() -> Self {
        Self::new()
    }
}

impl CommandList {
    pub fn new() -> Self {
        CommandList {
            slots: vec![None; HTYPE_SLOTS],
            fifo: VecDeque::new(),
        }
    }

    pub fn outstanding(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Places `cmd` in a free slot; a full list rejects it.
    pub fn issue(&mut self, cmd: HtypeCommand) -> Result<usize, ProtocolError> {
        let slot = self
            .slots
            .iter()
            .position(|s| s.is_none())
            .ok_or(ProtocolError::QueueFull(HTYPE_SLOTS))?;
        self.slots[slot] = Some(cmd);
        self.fifo.push_back(slot);
        Ok(slot)
    }

    /// Oldest issued command not yet handed to the device.
    pub fn fetch(&mut self) -> Option<(usize, HtypeCommand)> {
        let slot = self.fifo.pop_front()?;
        Some((slot, self.slots[slot].expect("queued slot is occupied")))
    }

    pub fn has_pending(&self) -> bool {
        !self.fifo.is_empty()
    }

    /// Frees `slot` once its completion has been serviced.
    pub fn complete(&mut self, slot: usize) -> Option<HtypeCommand> {
        self.slots[slot].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(tag: u64) -> HtypeCommand {
        HtypeCommand {
            tag,
            write: false,
            slba: tag * 8,
            sectors: 8,
            prdt: 0,
            prdt_entries: 1,
        }
    }

    #[test]
    fn thirty_third_command_is_rejected() {
        let mut l = CommandList::new();
        for t in 0..32 {
            l.issue(cmd(t)).unwrap();
        }
        assert_eq!(l.issue(cmd(32)), Err(ProtocolError::QueueFull(32)));
        let (slot, c) = l.fetch().unwrap();
        assert_eq!(c.tag, 0);
        l.complete(slot);
        assert!(l.issue(cmd(32)).is_ok());
        assert_eq!(l.outstanding(), 32);
    }

    #[test]
    fn fetch_order_is_issue_order() {
        let mut l = CommandList::new();
        for t in [5, 3, 9] {
            l.issue(cmd(t)).unwrap();
        }
        let tags: Vec<u64> = std::iter::from_fn(|| l.fetch().map(|(_, c)| c.tag)).collect();
        assert_eq!(tags, [5, 3, 9]);
    }
}
