//! When the software-side copy of the array conductances is refreshed.
//!
//! * `full-reread`: every matrix-vector product re-reads every device.
//! * `subset-round-robin`: after any training example that programmed a
//!   device anywhere in the network, re-read the programmed synapses plus the
//!   next `subset` synapses of this array in round-robin order (`None` reads
//!   the whole array).
//! * `cached`: only programmed synapses are re-read.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadAction {
    Nothing,
    All,
    Synapses(Vec<usize>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadPolicyParams {
    /// Synapses re-read per programming event; `None` means all of them.
    pub subset: Option<usize>,
}

pub trait ReadPolicy: Send + fmt::Debug {
    fn name(&self) -> &'static str;

    fn params(&self) -> ReadPolicyParams {
        ReadPolicyParams::default()
    }

    fn before_matvec(&mut self) -> ReadAction {
        ReadAction::Nothing
    }

    /// Called once per training example after the update phase.
    /// `programmed` lists synapses of this array programmed in the example.
    fn after_update(&mut self, programmed: &[usize], n_synapses: usize, network_programmed: bool) -> ReadAction;

    fn cursor(&self) -> u64 {
        0
    }

    fn set_cursor(&mut self, _cursor: u64) {}

    fn boxed_clone(&self) -> Box<dyn ReadPolicy>;
}

#[derive(Clone, Debug, Default)]
pub struct FullReread;

impl ReadPolicy for FullReread {
    fn name(&self) -> &'static str {
        "full-reread"
    }

    fn before_matvec(&mut self) -> ReadAction {
        ReadAction::All
    }

    fn after_update(&mut self, _: &[usize], _: usize, _: bool) -> ReadAction {
        ReadAction::Nothing
    }

    fn boxed_clone(&self) -> Box<dyn ReadPolicy> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SubsetRoundRobin {
    subset: Option<usize>,
    cursor: usize,
}

impl SubsetRoundRobin {
    pub fn new(subset: Option<usize>) -> Self {
        Self { subset, cursor: 0 }
    }
}

impl ReadPolicy for SubsetRoundRobin {
    fn name(&self) -> &'static str {
        "subset-round-robin"
    }

    fn params(&self) -> ReadPolicyParams {
        ReadPolicyParams { subset: self.subset }
    }

    fn after_update(&mut self, programmed: &[usize], n: usize, network_programmed: bool) -> ReadAction {
        if !network_programmed || n == 0 {
            return ReadAction::Nothing;
        }
        let k = match self.subset {
            Some(k) if k < n => k,
            _ => return ReadAction::All,
        };
        let mut list = Vec::with_capacity(k + programmed.len());
        list.extend_from_slice(programmed);
        let start = self.cursor % n;
        list.extend((0..k).map(|o| (start + o) % n));
        self.cursor = (start + k) % n;
        ReadAction::Synapses(list)
    }

    fn cursor(&self) -> u64 {
        self.cursor as u64
    }

    fn set_cursor(&mut self, cursor: u64) {
        self.cursor = cursor as usize;
    }

    fn boxed_clone(&self) -> Box<dyn ReadPolicy> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Debug, Default)]
pub struct CachedUntilProgrammed;

impl ReadPolicy for CachedUntilProgrammed {
    fn name(&self) -> &'static str {
        "cached"
    }

    fn after_update(&mut self, programmed: &[usize], _: usize, _: bool) -> ReadAction {
        if programmed.is_empty() {
            ReadAction::Nothing
        } else {
            ReadAction::Synapses(programmed.to_vec())
        }
    }

    fn boxed_clone(&self) -> Box<dyn ReadPolicy> {
        Box::new(self.clone())
    }
}

pub fn registry() -> Registry<dyn ReadPolicy, ReadPolicyParams> {
    Registry::new("read policy")
        .with("full-reread", |_| Ok(Box::new(FullReread) as Box<dyn ReadPolicy>))
        .with("subset-round-robin", |p: &ReadPolicyParams| {
            Ok(Box::new(SubsetRoundRobin::new(p.subset)) as Box<dyn ReadPolicy>)
        })
        .with("cached", |_| Ok(Box::new(CachedUntilProgrammed) as Box<dyn ReadPolicy>))
}

pub fn build(name: &str, params: ReadPolicyParams) -> Result<Box<dyn ReadPolicy>> {
    registry().build(name, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_wraps() {
        let mut p = SubsetRoundRobin::new(Some(3));
        assert_eq!(p.after_update(&[], 5, false), ReadAction::Nothing);
        assert_eq!(p.after_update(&[4], 5, true), ReadAction::Synapses(vec![4, 0, 1, 2]));
        assert_eq!(p.after_update(&[], 5, true), ReadAction::Synapses(vec![3, 4, 0]));
        assert_eq!(p.cursor(), 1);
    }

    #[test]
    fn round_robin_whole_array_when_subset_large() {
        let mut p = SubsetRoundRobin::new(Some(10));
        assert_eq!(p.after_update(&[], 5, true), ReadAction::All);
        let mut p = SubsetRoundRobin::new(None);
        assert_eq!(p.after_update(&[], 5, true), ReadAction::All);
    }

    #[test]
    fn registry_names() {
        let r = registry();
        let names: Vec<_> = r.names().collect();
        assert_eq!(names, ["cached", "full-reread", "subset-round-robin"]);
        assert_eq!(build("cached", Default::default()).unwrap().name(), "cached");
        assert!(build("sometimes", Default::default()).is_err());
    }
}
