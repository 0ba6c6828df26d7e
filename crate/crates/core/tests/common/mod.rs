//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use restlog_core::ingest::{LogEntry, ResourceInstance, UserQueue};
use restlog_core::slicing::LogSlice;

/// Instance pool: two resources with two ids each.
pub fn instance(k: u8) -> (String, String) {
    let resource = if k < 2 {
        "/projects"
    } else {
        "/projects/{id}/merge_requests"
    };
    (resource.to_string(), (k % 2 + 1).to_string())
}

pub fn build_queue(raw: &[(i64, Vec<u8>)]) -> UserQueue {
    let mut t = 0;
    let entries = raw
        .iter()
        .enumerate()
        .map(|(i, (gap, ks))| {
            t += gap;
            let mut params = BTreeMap::new();
            let mut phi = BTreeMap::new();
            for k in ks {
                let (r, v) = instance(*k);
                params.insert(format!("p{k}"), v.clone());
                phi.insert(format!("p{k}"), Some(ResourceInstance::new(r, v)));
            }
            LogEntry {
                entry_id: i as u64,
                t,
                op: "GET /x".into(),
                params,
                phi,
                user: "u".into(),
                user_hint: None,
                source_line: i,
            }
        })
        .collect();
    UserQueue {
        user: "u".into(),
        entries,
    }
}

pub fn tuples(e: &LogEntry) -> Vec<(String, String)> {
    e.phi
        .values()
        .flatten()
        .map(|i| (i.resource.clone(), i.id_value.clone()))
        .collect()
}

/// Straight re-trace of the slicing procedure over plain id lists.
/// `sliding` selects the window-from-start bound; otherwise the bound is the
/// gap to the most recently added entry.
pub fn oracle(q: &UserQueue, dt: i64, sliding: bool) -> Vec<Vec<u64>> {
    let es = &q.entries;
    let mut claimed: Vec<u64> = Vec::new();
    let mut starts: Vec<usize> = if es.is_empty() { vec![] } else { vec![0] };
    let mut out = Vec::new();
    let mut cursor = 0;
    while cursor < starts.len() {
        let s = starts[cursor];
        cursor += 1;
        if claimed.contains(&es[s].entry_id) {
            continue;
        }
        let mut members = vec![s];
        for j in s + 1..es.len() {
            if claimed.contains(&es[j].entry_id) {
                continue;
            }
            let reference = if sliding {
                es[s].t
            } else {
                es[*members.last().unwrap()].t
            };
            if es[j].t - reference > dt {
                starts.push(j);
                break;
            }
            let overlap = members
                .iter()
                .any(|&m| tuples(&es[m]).iter().any(|x| tuples(&es[j]).contains(x)));
            if overlap {
                members.push(j);
            } else {
                starts.push(j);
            }
        }
        let ids: Vec<u64> = members.iter().map(|&m| es[m].entry_id).collect();
        claimed.extend(&ids);
        out.push(ids);
    }
    out
}

pub fn queue_strategy() -> impl Strategy<Value = Vec<(i64, Vec<u8>)>> {
    prop::collection::vec(
        (
            prop_oneof![Just(0i64), 1_000i64..20_000, 20_000i64..400_000],
            prop::collection::vec(0u8..4, 0..=3),
        ),
        0..=12,
    )
}

pub fn dt_strategy() -> impl Strategy<Value = i64> {
    prop_oneof![Just(10_000i64), Just(30_000), Just(60_000), Just(300_000)]
}

/// Temporal bound, overlap chaining and exactly-one-slice partition.
pub fn check_slice_invariants(q: &UserQueue, slices: &[LogSlice], dt: i64, sliding: bool) -> Result<(), String> {
    let mut all: Vec<u64> = slices.iter().flat_map(|s| s.entry_ids()).collect();
    all.sort_unstable();
    let expected: Vec<u64> = q.entries.iter().map(|e| e.entry_id).collect();
    if all != expected {
        return Err(format!("not a partition: {all:?} vs {expected:?}"));
    }
    for s in slices {
        if s.entries.is_empty() {
            return Err("empty slice".into());
        }
        if !s.entries.windows(2).all(|w| w[0].entry_id < w[1].entry_id) {
            return Err(format!("slice {:?} out of order", s.entry_ids()));
        }
        for (k, e) in s.entries.iter().enumerate().skip(1) {
            let reference = if sliding { s.entries[0].t } else { s.entries[k - 1].t };
            if e.t - reference > dt {
                return Err(format!("slice {:?} exceeds the time bound", s.entry_ids()));
            }
            let linked = s.entries[..k]
                .iter()
                .any(|p| tuples(p).iter().any(|x| tuples(e).contains(x)));
            if !linked {
                return Err(format!("entry {} shares nothing with its slice", e.entry_id));
            }
        }
    }
    Ok(())
}
