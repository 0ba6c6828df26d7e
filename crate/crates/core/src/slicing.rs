//! Locality slicing of per-user queues.
//!
//! Both strategies grow a slice from a start entry by scanning later entries
//! in time order, appending those that share a resource instance with the
//! slice so far. They differ in the temporal bound:
//!
//! * maximum lead time (MLTS) bounds the gap between consecutive slice entries;
//! * sliding time window (STWS) bounds the distance from the slice's start entry.
//!
//! An entry that is too late ends the scan; one that shares nothing is
//! skipped. Either way it becomes a candidate start for a later slice.
//! Entries already placed in a slice are ignored both when popped as a start
//! and when met during a scan, so each strategy partitions its queue.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ingest::{LogEntry, ResourceInstance, UserQueue};

pub const DEFAULT_DT_MLT_MS: i64 = 30_000;
pub const DEFAULT_DT_STW_MS: i64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mlts,
    Stws,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSlice {
    pub slice_id: u64,
    pub entries: Vec<LogEntry>,
    pub strategy: Strategy,
    pub user: String,
}

impl LogSlice {
    pub fn entry_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.entry_id).collect()
    }

    pub fn instances(&self) -> BTreeSet<ResourceInstance> {
        self.entries.iter().flat_map(|e| e.instances()).cloned().collect()
    }

    pub fn first_t(&self) -> i64 {
        self.entries.first().map_or(0, |e| e.t)
    }

    pub fn time_span(&self) -> (i64, i64) {
        let min = self.entries.iter().map(|e| e.t).min().unwrap_or(0);
        let max = self.entries.iter().map(|e| e.t).max().unwrap_or(0);
        (min, max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSet {
    pub slices: Vec<LogSlice>,
}

impl SliceSet {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

/// Slice indices of the queue: one `Vec` of positions per slice.
fn slice_indices(entries: &[LogEntry], dt: i64, strategy: Strategy) -> Vec<Vec<usize>> {
    let n = entries.len();
    let mut slices = Vec::new();
    if n == 0 {
        return slices;
    }
    let mut visited = vec![false; n];
    let mut starts = VecDeque::from([0usize]);

    while let Some(s) = starts.pop_front() {
        if visited[s] {
            continue;
        }
        let mut sigma = vec![s];
        let mut shared: BTreeSet<ResourceInstance> = entries[s].instances().into_iter().cloned().collect();
        // MLTS: time of the last appended entry; STWS: time of the start entry.
        let mut anchor = entries[s].t;

        for i in s + 1..n {
            if visited[i] {
                continue;
            }
            let e = &entries[i];
            if e.t - anchor > dt {
                starts.push_back(i);
                break;
            }
            if !e.shares_instance_with(&shared) {
                starts.push_back(i);
                continue;
            }
            sigma.push(i);
            shared.extend(e.instances().into_iter().cloned());
            if strategy == Strategy::Mlts {
                anchor = e.t;
            }
        }

        for &i in &sigma {
            visited[i] = true;
        }
        slices.push(sigma);
    }
    slices
}

fn build(queue: &UserQueue, dt: i64, strategy: Strategy) -> Vec<LogSlice> {
    slice_indices(&queue.entries, dt, strategy)
        .into_iter()
        .map(|idx| LogSlice {
            slice_id: 0,
            entries: idx.into_iter().map(|i| queue.entries[i].clone()).collect(),
            strategy,
            user: queue.user.clone(),
        })
        .collect()
}

/// Maximum lead time slicing; `dt_mlt` in milliseconds.
pub fn mlts(queue: &UserQueue, dt_mlt: i64) -> Vec<LogSlice> {
    assert!(dt_mlt > 0, "MLTS threshold must be positive");
    build(queue, dt_mlt, Strategy::Mlts)
}

/// Sliding time window slicing; `dt_stw` in milliseconds.
pub fn stws(queue: &UserQueue, dt_stw: i64) -> Vec<LogSlice> {
    assert!(dt_stw > 0, "STWS window must be positive");
    build(queue, dt_stw, Strategy::Stws)
}

/// Concatenates slice sets, dropping slices whose ordered entry ids were
/// already seen. Output is ordered by strategy (MLTS first), then first
/// timestamp, and renumbered from 0.
pub fn merge_slice_sets(sets: Vec<Vec<LogSlice>>) -> SliceSet {
    let mut seen = BTreeSet::new();
    let mut slices: Vec<LogSlice> = Vec::new();
    let mut all: Vec<LogSlice> = sets.into_iter().flatten().collect();
    all.sort_by_key(|s| (s.strategy, s.first_t()));
    for s in all {
        if seen.insert(s.entry_ids()) {
            slices.push(s);
        }
    }
    for (i, s) in slices.iter_mut().enumerate() {
        s.slice_id = i as u64;
    }
    SliceSet { slices }
}

/// Runs both strategies over every queue and merges the results.
pub fn slice_queues(queues: &BTreeMap<String, UserQueue>, dt_mlt: i64, dt_stw: i64) -> SliceSet {
    let mut by_mlts = Vec::new();
    let mut by_stws = Vec::new();
    for q in queues.values() {
        by_mlts.extend(mlts(q, dt_mlt));
        by_stws.extend(stws(q, dt_stw));
    }
    merge_slice_sets(vec![by_mlts, by_stws])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ResourceInstance;

    fn e(id: u64, t_s: i64, instances: &[(&str, &str)]) -> LogEntry {
        LogEntry {
            entry_id: id,
            t: t_s * 1000,
            op: "GET /x".into(),
            params: instances
                .iter()
                .enumerate()
                .map(|(k, (_, v))| (format!("p{k}"), v.to_string()))
                .collect(),
            phi: instances
                .iter()
                .enumerate()
                .map(|(k, (r, v))| (format!("p{k}"), Some(ResourceInstance::new(*r, *v))))
                .collect(),
            user: "u".into(),
            user_hint: None,
            source_line: id as usize,
        }
    }

    fn queue(entries: Vec<LogEntry>) -> UserQueue {
        UserQueue {
            user: "u".into(),
            entries,
        }
    }

    fn ids(slices: &[LogSlice]) -> Vec<Vec<u64>> {
        slices.iter().map(|s| s.entry_ids()).collect()
    }

    const P15: (&str, &str) = ("/projects", "15");
    const MR3: (&str, &str) = ("/projects/{id}/merge_requests", "3");

    #[test]
    fn two_functional_groups() {
        // E3, E5 on project 15; a long pause; E6, E7 on project 15 + MR 3.
        let q = queue(vec![
            e(3, 0, &[P15]),
            e(4, 5, &[("/projects", "16")]),
            e(5, 10, &[P15]),
            e(6, 2000, &[P15, MR3]),
            e(7, 2010, &[P15, MR3]),
        ]);
        assert_eq!(ids(&mlts(&q, 30_000)), [vec![3, 5], vec![4], vec![6, 7]]);
        assert_eq!(ids(&stws(&q, 300_000)), [vec![3, 5], vec![4], vec![6, 7]]);
    }

    #[test]
    fn single_entry_queue() {
        let q = queue(vec![e(0, 0, &[])]);
        assert_eq!(ids(&mlts(&q, 1)), [vec![0]]);
        assert_eq!(ids(&stws(&q, 1)), [vec![0]]);
        assert!(mlts(&queue(vec![]), 1).is_empty());
    }

    #[test]
    fn stws_window_from_start() {
        let a = ("/r", "a");
        let q = queue(vec![e(1, 0, &[a]), e(2, 10, &[a]), e(3, 70, &[a])]);
        assert_eq!(ids(&stws(&q, 60_000)), [vec![1, 2], vec![3]]);
        // MLTS keeps chaining: every consecutive gap is below 60s.
        assert_eq!(ids(&mlts(&q, 60_000)), [vec![1, 2, 3]]);
    }

    #[test]
    fn stws_overlap_miss_starts_new_slice() {
        let q = queue(vec![e(1, 0, &[("/r", "a")]), e(2, 50, &[("/r", "b")])]);
        assert_eq!(ids(&stws(&q, 60_000)), [vec![1], vec![2]]);
    }

    #[test]
    fn zero_instance_entries_stay_alone() {
        let a = ("/r", "a");
        let q = queue(vec![e(1, 0, &[a]), e(2, 1, &[]), e(3, 2, &[a])]);
        assert_eq!(ids(&mlts(&q, 10_000)), [vec![1, 3], vec![2]]);
    }

    #[test]
    fn merge_deduplicates_identical_slices() {
        let mk = |ids: &[u64], strategy| LogSlice {
            slice_id: 99,
            entries: ids.iter().map(|&i| e(i, i as i64, &[])).collect(),
            strategy,
            user: "u".into(),
        };
        let merged = merge_slice_sets(vec![
            vec![mk(&[6, 7], Strategy::Mlts)],
            vec![mk(&[6, 7], Strategy::Stws)],
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.slices[0].strategy, Strategy::Mlts);

        let merged = merge_slice_sets(vec![
            vec![mk(&[1, 2], Strategy::Mlts), mk(&[3], Strategy::Mlts)],
            vec![mk(&[1, 2, 3], Strategy::Stws)],
        ]);
        assert_eq!(ids(&merged.slices), [vec![1, 2], vec![3], vec![1, 2, 3]]);
        assert_eq!(merged.slices.iter().map(|s| s.slice_id).collect::<Vec<_>>(), [0, 1, 2]);

        let disjoint = merge_slice_sets(vec![vec![mk(&[1], Strategy::Mlts)], vec![mk(&[2], Strategy::Stws)]]);
        assert_eq!(ids(&disjoint.slices), [vec![1], vec![2]]);
    }
}
