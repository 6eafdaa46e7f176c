//! Random small networks for cross-checking the recurring-set engine
//! against the brute-force lasso oracle.
//!
//! The oracle only sees lassos with a short prefix and a short cycle, so
//! the generator filters its samples down to networks where those bounds
//! cannot be the reason for a missed witness: every state is close to the
//! start, and every witness the engine produces can be realised as a
//! closed walk the oracle's cycle budget can afford.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fairness::{find_violating_recurring_set, FairnessSpec, RecurringSet};
use crate::semantics::{build_lts, Lts, Semantics};
use crate::syntax::{parse_network, InstrId, Network, RecvBranch, SendBranch, Thread};

/// Longest lasso prefix the oracle explores.
pub const ORACLE_PREFIX_BOUND: usize = 8;
/// Longest lasso cycle the oracle explores.
pub const ORACLE_CYCLE_BOUND: usize = 12;

const LOCATION_NAMES: [&str; 4] = ["p", "q", "r", "s"];
const LABELS: [&str; 3] = ["a", "b", "c"];

fn sample_thread(
    rng: &mut ChaCha8Rng,
    peers: &[&str],
    depth: usize,
    scope: &mut Vec<(String, bool)>,
    next_var: &mut usize,
) -> Thread {
    let usable: Vec<String> = scope
        .iter()
        .filter(|(_, shielded)| *shielded)
        .map(|(v, _)| v.clone())
        .collect();
    if depth == 0 {
        if !usable.is_empty() && rng.gen_bool(0.6) {
            return Thread::Var(usable[rng.gen_range(0..usable.len())].clone());
        }
        return Thread::End;
    }
    match rng.gen_range(0..100) {
        0..35 => {
            let k = rng.gen_range(1..=3);
            let branches = (0..k)
                .map(|_| SendBranch {
                    target: peers[rng.gen_range(0..peers.len())].to_string(),
                    label: LABELS[rng.gen_range(0..LABELS.len())].to_string(),
                    id: InstrId(0),
                    cont: {
                        let mut inner = scope
                            .iter()
                            .map(|(v, _)| (v.clone(), true))
                            .collect::<Vec<_>>();
                        sample_thread(rng, peers, depth - 1, &mut inner, next_var)
                    },
                })
                .collect();
            Thread::Internal(branches)
        }
        35..70 => {
            let k = rng.gen_range(1..=3);
            let branches = (0..k)
                .map(|_| RecvBranch {
                    source: peers[rng.gen_range(0..peers.len())].to_string(),
                    label: LABELS[rng.gen_range(0..LABELS.len())].to_string(),
                    id: InstrId(0),
                    cont: {
                        let mut inner = scope
                            .iter()
                            .map(|(v, _)| (v.clone(), true))
                            .collect::<Vec<_>>();
                        sample_thread(rng, peers, depth - 1, &mut inner, next_var)
                    },
                })
                .collect();
            Thread::External(branches)
        }
        70..85 => {
            let var = format!("V{}", *next_var);
            *next_var += 1;
            scope.push((var.clone(), false));
            let body = sample_thread(rng, peers, depth - 1, scope, next_var);
            scope.pop();
            Thread::Rec {
                var,
                id: InstrId(0),
                body: Box::new(body),
            }
        }
        _ => {
            if !usable.is_empty() && rng.gen_bool(0.7) {
                Thread::Var(usable[rng.gen_range(0..usable.len())].clone())
            } else {
                Thread::End
            }
        }
    }
}

fn sample_network(rng: &mut ChaCha8Rng, index: usize) -> Option<Network> {
    let n = rng.gen_range(2..=4);
    let locs = &LOCATION_NAMES[..n];
    let mut src = format!("net rnd{index} {{\n");
    let mut next_var = 0usize;
    for (i, loc) in locs.iter().enumerate() {
        let peers: Vec<&str> = locs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, l)| *l)
            .collect();
        let mut scope = Vec::new();
        let depth = rng.gen_range(1..=4);
        let t = sample_thread(rng, &peers, depth, &mut scope, &mut next_var);
        src.push_str(&format!("  loc {loc} = {t}\n"));
    }
    src.push_str("}\n");
    parse_network(&src).ok()
}

/// A deterministic stream of small parse-valid networks.
pub fn random_networks(seed: u64, count: usize) -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut index = 0usize;
    while out.len() < count {
        index += 1;
        if let Some(net) = sample_network(&mut rng, index) {
            out.push(net);
        }
    }
    out
}

fn all_states_within(lts: &Lts, bound: usize) -> bool {
    let mut dist = vec![usize::MAX; lts.states.len()];
    dist[lts.initial] = 0;
    let mut queue = VecDeque::from([lts.initial]);
    while let Some(sid) = queue.pop_front() {
        for &tid in &lts.outgoing[sid] {
            let nxt = lts.transitions[tid].target;
            if dist[nxt] == usize::MAX {
                dist[nxt] = dist[sid] + 1;
                queue.push_back(nxt);
            }
        }
    }
    dist.iter().all(|&d| d <= bound)
}

/// A closed walk from the witness's smallest state that traverses every
/// one of its transitions within the given number of steps; such a walk
/// is a fair cycle the oracle's enumeration can reach.
pub fn covering_closed_walk_within(lts: &Lts, set: &RecurringSet, bound: usize) -> bool {
    crate::fairness::covering_cycle(lts, set, bound).is_some()
}

/// Whether the oracle's bounds are no obstacle on this system: every
/// state is within the prefix budget, and every engine witness for the
/// compared fairness notions fits in the cycle budget.
pub fn within_oracle_reach(lts: &Lts) -> bool {
    if lts.states.len() > 40 || !all_states_within(lts, ORACLE_PREFIX_BOUND) {
        return false;
    }
    let avoids =
        std::iter::once(None).chain(lts.locations.iter().map(|l| Some(l.as_str())));
    for avoid in avoids {
        for spec in FairnessSpec::comparison_family() {
            if let Some(set) = find_violating_recurring_set(lts, spec, avoid) {
                if !covering_closed_walk_within(lts, &set, ORACLE_CYCLE_BOUND) {
                    return false;
                }
            }
        }
    }
    true
}

/// Networks whose transition systems, under both semantics, the oracle
/// can fully arbitrate.
pub fn oracle_friendly_networks(seed: u64, count: usize) -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut index = 0usize;
    let budget = count.saturating_mul(5000);
    while out.len() < count {
        index += 1;
        assert!(
            index <= budget,
            "generator rejected {budget} candidates in a row; filters too strict"
        );
        let Some(net) = sample_network(&mut rng, index) else {
            continue;
        };
        let friendly = [Semantics::Default, Semantics::Reactive]
            .iter()
            .all(|&sem| match build_lts(&net, sem) {
                Ok(lts) => within_oracle_reach(&lts),
                Err(_) => false,
            });
        if friendly {
            out.push(net);
        }
    }
    out
}
