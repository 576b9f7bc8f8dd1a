//! Coverage records and hit tallies shared by the simulator and the scorers.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which coverage events one simulated test hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub test_id: u64,
    pub hits: FixedBitSet,
}

impl CoverageRecord {
    pub fn new(test_id: u64, num_events: usize) -> Self {
        CoverageRecord {
            test_id,
            hits: FixedBitSet::with_capacity(num_events),
        }
    }

    pub fn from_events(test_id: u64, num_events: usize, events: impl IntoIterator<Item = usize>) -> Self {
        let mut r = Self::new(test_id, num_events);
        for e in events {
            r.hits.insert(e);
        }
        r
    }

    pub fn num_events(&self) -> usize {
        self.hits.len()
    }

    pub fn is_hit(&self, event: usize) -> bool {
        self.hits.contains(event)
    }

    pub fn hit_events(&self) -> impl Iterator<Item = usize> + '_ {
        self.hits.ones()
    }
}

/// Number of simulated tests that hit each coverage event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCounts {
    pub counts: Vec<u32>,
}

impl HitCounts {
    pub fn zeros(num_events: usize) -> Self {
        HitCounts {
            counts: vec![0; num_events],
        }
    }

    pub fn from_records<'a>(num_events: usize, records: impl IntoIterator<Item = &'a CoverageRecord>) -> Result<Self> {
        let mut h = Self::zeros(num_events);
        for r in records {
            h.add(r)?;
        }
        Ok(h)
    }

    pub fn add(&mut self, record: &CoverageRecord) -> Result<()> {
        if record.num_events() != self.counts.len() {
            return Err(Error::dims("coverage record", self.counts.len(), record.num_events()));
        }
        for e in record.hit_events() {
            self.counts[e] += 1;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Running union of hit events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulativeCoverage {
    covered: FixedBitSet,
    count: usize,
}

impl CumulativeCoverage {
    pub fn new(num_events: usize) -> Self {
        CumulativeCoverage {
            covered: FixedBitSet::with_capacity(num_events),
            count: 0,
        }
    }

    pub fn add(&mut self, record: &CoverageRecord) {
        self.add_hits(&record.hits);
    }

    pub fn add_hits(&mut self, hits: &FixedBitSet) {
        self.covered.union_with(hits);
        self.count = self.covered.count_ones(..);
    }

    pub fn covered(&self) -> usize {
        self.count
    }

    pub fn num_events(&self) -> usize {
        self.covered.len()
    }

    pub fn fraction(&self) -> f64 {
        if self.covered.is_empty() {
            return 1.0;
        }
        self.count as f64 / self.covered.len() as f64
    }

    pub fn events(&self) -> &FixedBitSet {
        &self.covered
    }
}

/// Smallest number of covered events that satisfies a coverage target.
pub fn required_events(target: f64, num_events: usize) -> usize {
    let exact = target * num_events as f64;
    // absorb representation error such as 0.95 * 800 = 760.0000000000001
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}
