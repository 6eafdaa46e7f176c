//! Synthesis of a global type from a network.
//!
//! The algorithm replays the network, always letting the oldest sender
//! that can fire all of its options lead the next interaction, and ties
//! a recursion knot whenever it comes back to a network it has fully
//! served. When it reaches a network where no sender can fire all of its
//! options it gives up on that path and emits the deadlock marker.

use std::collections::HashMap;

use crate::semantics::{initial_state, is_unfolded, ready_locations, unfold_network, NetState, TermState};
use crate::syntax::{free_vars_g, GBranch, GlobalType, Network, Thread};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesis {
    pub gtype: GlobalType,
    pub deadlocked: bool,
}

/// One interaction the builder has already scheduled: the network it was
/// scheduled in, the sender it let lead, and the receiver of the branch
/// being explored.
type History = Vec<(NetState, String, String)>;

struct Ctx {
    binder: HashMap<NetState, String>,
}

const BINDER_NAMES: [&str; 10] = ["X", "Z", "Y", "W", "V", "U", "T", "S", "R", "Q"];

impl Ctx {
    fn binder_for(&mut self, m: &NetState) -> String {
        if let Some(name) = self.binder.get(m) {
            return name.clone();
        }
        let i = self.binder.len();
        let name = if i < BINDER_NAMES.len() {
            BINDER_NAMES[i].to_string()
        } else {
            format!("X{}", i - BINDER_NAMES.len() + 1)
        };
        self.binder.insert(m.clone(), name.clone());
        name
    }
}

fn all_end(m: &NetState) -> bool {
    m.values().all(TermState::is_end)
}

/// Senders already scheduled for this network on the current path.
fn served<'h>(h: &'h History, m: &NetState) -> Vec<&'h str> {
    h.iter()
        .filter(|(n, _, _)| n == m)
        .map(|(_, p, _)| p.as_str())
        .collect()
}

/// Oldest location that can fire all of its options and has not led an
/// interaction in this network yet. Age is the name order.
fn chooser(h: &History, m: &NetState) -> Option<String> {
    let taken = served(h, m);
    ready_locations(m)
        .into_iter()
        .map(|(loc, _)| loc)
        .filter(|loc| !taken.contains(&loc.as_str()))
        .min()
}

/// The network after the sender's given branch fires; the receiver takes
/// its first branch matching the sender and label.
fn fire(m: &NetState, sender: &str, label: &str, receiver: &str, send_cont: &Thread) -> NetState {
    let TermState::Plain(Thread::External(rbs)) = &m[receiver] else {
        unreachable!("receiver of a ready sender offers an input");
    };
    let rb = rbs
        .iter()
        .find(|rb| rb.source == sender && rb.label == label)
        .expect("ready sender's branch has a matching input");
    let mut next = m.clone();
    next.insert(sender.to_string(), TermState::Plain(send_cont.clone()));
    next.insert(receiver.to_string(), TermState::Plain(rb.cont.clone()));
    next
}

fn interaction(h: &History, m: &NetState, sender: &str, ctx: &mut Ctx) -> GlobalType {
    let TermState::Plain(Thread::Internal(branches)) = &m[sender] else {
        unreachable!("chosen sender heads an internal choice");
    };
    let gbranches = branches
        .iter()
        .map(|b| {
            let succ = fire(m, sender, &b.label, &b.target, &b.cont);
            let mut h2 = h.clone();
            h2.push((m.clone(), sender.to_string(), b.target.clone()));
            GBranch {
                receiver: b.target.clone(),
                label: b.label.clone(),
                cont: gt(&h2, &succ, ctx),
            }
        })
        .collect();
    GlobalType::Comm {
        sender: sender.to_string(),
        branches: gbranches,
    }
}

fn gt(h: &History, m: &NetState, ctx: &mut Ctx) -> GlobalType {
    let m = if is_unfolded(m) {
        m.clone()
    } else {
        unfold_network(m)
    };
    if all_end(&m) {
        return GlobalType::End;
    }
    if ready_locations(&m).is_empty() {
        return GlobalType::Deadlock;
    }
    if h.iter().any(|(n, _, _)| *n == m) {
        let taken = served(h, &m);
        let all_served = ready_locations(&m)
            .iter()
            .all(|(loc, _)| taken.contains(&loc.as_str()));
        if all_served {
            return GlobalType::Var(ctx.binder_for(&m));
        }
        let p = chooser(h, &m).expect("an unserved ready location exists");
        return interaction(h, &m, &p, ctx);
    }
    let name = ctx.binder_for(&m);
    let p = chooser(h, &m).expect("a ready location exists");
    GlobalType::Rec {
        var: name,
        body: Box::new(interaction(h, &m, &p, ctx)),
    }
}

/// Build a global type for the network. The result mentions the deadlock
/// marker exactly when the builder ran into a network it could not
/// schedule, in which case the network is not deadlock-free.
pub fn synthesize(net: &Network) -> Synthesis {
    let mut ctx = Ctx {
        binder: HashMap::new(),
    };
    let gtype = gt(&Vec::new(), &initial_state(net), &mut ctx);
    let deadlocked = gtype.mentions_deadlock();
    Synthesis { gtype, deadlocked }
}

/// Drop recursion binders whose variable is never used. The builder
/// plants an anchor at every first visit, whether or not the network
/// comes around again; the unused ones are noise for downstream tools.
pub fn strip_unused_binders(g: &GlobalType) -> GlobalType {
    match g {
        GlobalType::End | GlobalType::Deadlock | GlobalType::Var(_) => g.clone(),
        GlobalType::Rec { var, body } => {
            let body = strip_unused_binders(body);
            if free_vars_g(&body).contains(var) {
                GlobalType::Rec {
                    var: var.clone(),
                    body: Box::new(body),
                }
            } else {
                body
            }
        }
        GlobalType::Comm { sender, branches } => GlobalType::Comm {
            sender: sender.clone(),
            branches: branches
                .iter()
                .map(|b| GBranch {
                    receiver: b.receiver.clone(),
                    label: b.label.clone(),
                    cont: strip_unused_binders(&b.cont),
                })
                .collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_network;

    fn synth(src: &str) -> Synthesis {
        synthesize(&parse_network(src).unwrap())
    }

    #[test]
    fn negotiation_gets_a_spurious_inner_anchor() {
        let s = synth(
            "net n {
                loc buyer = rec X. seller!talk; X (+) seller!buy; end
                loc seller = rec Y. buyer?talk; Y + buyer?buy; shipper!order; end
                loc shipper = seller?order; end
            }",
        );
        assert_eq!(
            s.gtype.to_string(),
            "rec X. buyer -> seller: talk; X [+] buyer -> seller: buy; (rec Z. seller -> shipper: order; end)"
        );
        assert!(!s.deadlocked);
        assert_eq!(
            strip_unused_binders(&s.gtype).to_string(),
            "rec X. buyer -> seller: talk; X [+] buyer -> seller: buy; seller -> shipper: order; end"
        );
    }

    #[test]
    fn a_one_shot_competitor_leaves_the_loop_unschedulable() {
        let s = synth(
            "net n {
                loc seller = rec X. buyer1?order1; X + buyer2?order2; end
                loc buyer1 = rec Y. seller!order1; Y
                loc buyer2 = seller!order2; end
            }",
        );
        assert_eq!(
            s.gtype.to_string(),
            "rec X. buyer1 -> seller: order1; buyer2 -> seller: order2; deadlock"
        );
        assert!(s.deadlocked);
    }

    #[test]
    fn an_unreceivable_option_fails_at_once() {
        let s = synth(
            "net n {
                loc buyer = seller!buy; end (+) seller!order; end
                loc seller = buyer?buy; end
            }",
        );
        assert_eq!(s.gtype, GlobalType::Deadlock);
        assert_eq!(s.gtype.to_string(), "deadlock");
        assert!(s.deadlocked);
    }

    #[test]
    fn disjoint_pairs_are_scheduled_round_robin() {
        let s = synth(
            "net n {
                loc seller1 = rec X. buyer1?order; X
                loc buyer1 = rec Y. seller1!order; Y
                loc seller2 = rec Z. buyer2?order; Z
                loc buyer2 = rec W. seller2!order; W
            }",
        );
        assert_eq!(
            s.gtype.to_string(),
            "rec X. buyer1 -> seller1: order; buyer2 -> seller2: order; X"
        );
        assert!(!s.deadlocked);
    }

    #[test]
    fn choice_branches_get_their_own_anchors() {
        let s = synth(
            "net n {
                loc buyer = rec X. seller1!nego; X (+) seller2!order; seller1!done; end
                loc seller1 = rec Y. buyer?nego; Y + buyer?done; end
                loc seller2 = buyer?order; end
            }",
        );
        assert_eq!(
            s.gtype.to_string(),
            "rec X. buyer -> seller1: nego; X [+] buyer -> seller2: order; (rec Z. buyer -> seller1: done; end)"
        );
    }

    #[test]
    fn sibling_copies_get_their_own_anchor_names() {
        // The two continuations look alike but are distinct occurrences,
        // hence distinct networks with distinct anchors.
        let s = synth(
            "net n {
                loc p = q!a; q!c; end (+) q!b; q!c; end
                loc q = p?a; p?c; end + p?b; p?c; end
            }",
        );
        assert_eq!(
            s.gtype.to_string(),
            "rec X. p -> q: a; (rec Z. p -> q: c; end) [+] p -> q: b; (rec Y. p -> q: c; end)"
        );
        assert_eq!(
            strip_unused_binders(&s.gtype).to_string(),
            "p -> q: a; p -> q: c; end [+] p -> q: b; p -> q: c; end"
        );
    }

    #[test]
    fn lone_finished_location_yields_end() {
        let s = synth("net n { loc p = end }");
        assert_eq!(s.gtype, GlobalType::End);
        assert!(!s.deadlocked);
    }

    #[test]
    fn output_is_reproducible() {
        let net = parse_network(
            "net n {
                loc seller = rec X. buyer1?order1; X + buyer2?order2; X
                loc buyer1 = rec Y. seller!order1; Y
                loc buyer2 = rec Z. seller!order2; Z
            }",
        )
        .unwrap();
        let a = synthesize(&net);
        let b = synthesize(&net);
        assert_eq!(a, b);
        assert_eq!(
            a.gtype.to_string(),
            "rec X. buyer1 -> seller: order1; buyer2 -> seller: order2; X"
        );
    }

    #[test]
    fn deadlock_in_output_means_a_stuck_state_exists() {
        let net = parse_network(
            "net n {
                loc seller = rec X. buyer1?order1; X + buyer2?order2; end
                loc buyer1 = rec Y. seller!order1; Y
                loc buyer2 = seller!order2; end
            }",
        )
        .unwrap();
        assert!(synthesize(&net).deadlocked);
        let lts = crate::semantics::build_lts(&net, crate::semantics::Semantics::Default).unwrap();
        assert!(!crate::fairness::deadlock_free(&lts).holds);
    }
}
