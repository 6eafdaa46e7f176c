//! Structural sanity on the whole corpus: the transition system does
//! not care how the parallel composition is written down, the typing
//! judgement does not care how far recursion is unrolled, and a thread
//! whose inputs are all unary follows its own shape as a type.

use std::fs;
use std::path::PathBuf;

use justcheck_core::semantics::{build_lts, Lts, NetState, Semantics};
use justcheck_core::syntax::{parse_file, parse_network, unfold, Network, SourceFile};
use justcheck_core::types::{
    judge, participants, project, thread_as_projection, unfold_p,
};

fn corpus_files() -> Vec<(PathBuf, SourceFile)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "sess"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let src = fs::read_to_string(&path).unwrap();
            let parsed = parse_file(&src).unwrap_or_else(|e| panic!("{path:?}: {e}"));
            (path, parsed)
        })
        .collect()
}

fn render_state(s: &NetState) -> String {
    s.iter()
        .map(|(l, t)| format!("{l} = {t}"))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Everything observable about an LTS, independent of state numbering
/// and instruction occurrences: the initial state and the sorted
/// renderings of all states and transitions.
fn observable(lts: &Lts) -> (String, Vec<String>, Vec<String>) {
    let initial = render_state(&lts.states[lts.initial]);
    let mut states: Vec<String> = lts.states.iter().map(render_state).collect();
    states.sort();
    let mut trans: Vec<String> = lts
        .transitions
        .iter()
        .map(|t| {
            let mut comp = t.comp.clone();
            comp.sort();
            format!(
                "{} --{}--> {} [{}]",
                render_state(&lts.states[t.source]),
                t.action,
                render_state(&lts.states[t.target]),
                comp.join(",")
            )
        })
        .collect();
    trans.sort();
    (initial, states, trans)
}

fn permuted_sources(net: &Network) -> Vec<String> {
    let entries: Vec<(String, String)> = net
        .locations
        .iter()
        .map(|(l, t)| (l.clone(), t.to_string()))
        .collect();
    if entries.len() < 2 {
        return Vec::new();
    }
    let mut reversed = entries.clone();
    reversed.reverse();
    let mut rotated = entries.clone();
    rotated.rotate_left(1);
    [reversed, rotated]
        .into_iter()
        .map(|order| {
            let mut src = format!("net {} {{\n", net.name);
            for (l, t) in &order {
                src.push_str(&format!("  loc {l} = {t}\n"));
            }
            src.push('}');
            src
        })
        .collect()
}

#[test]
fn the_lts_ignores_the_order_of_the_parallel_composition() {
    for (path, file) in corpus_files() {
        for net in &file.networks {
            for perm_src in permuted_sources(net) {
                let perm = parse_network(&perm_src)
                    .unwrap_or_else(|e| panic!("{path:?} {}: {e}", net.name));
                for sem in [Semantics::Default, Semantics::Reactive] {
                    let a = observable(&build_lts(net, sem).unwrap());
                    let b = observable(&build_lts(&perm, sem).unwrap());
                    assert_eq!(a, b, "{path:?} {} under {sem}", net.name);
                }
            }
        }
    }
}

#[test]
fn the_judgement_is_stable_under_unfolding_on_either_side() {
    let mut pairs = 0usize;
    for (path, file) in corpus_files() {
        let mut projections = Vec::new();
        for def in &file.globals {
            let Ok(parts) = participants(&def.gtype) else {
                continue;
            };
            for r in parts {
                projections.push(project(&def.gtype, &r).unwrap());
            }
        }
        for net in &file.networks {
            for (loc, t) in &net.locations {
                let tu = unfold(t);
                for ty in &projections {
                    let verdict = judge(t, ty);
                    let tyu = unfold_p(ty);
                    for (t2, ty2) in [(t, ty), (&tu, ty), (t, &tyu), (&tu, &tyu)] {
                        assert_eq!(
                            judge(t2, ty2),
                            verdict,
                            "{path:?} {} at {loc}: unfolding changed the judgement",
                            net.name
                        );
                    }
                    pairs += 1;
                }
            }
        }
    }
    assert!(pairs > 50, "corpus gave only {pairs} thread/type pairs");
}

#[test]
fn unary_input_threads_follow_their_own_shape() {
    let mut seen = 0usize;
    for (path, file) in corpus_files() {
        for net in &file.networks {
            for (loc, t) in &net.locations {
                if let Some(ty) = thread_as_projection(t) {
                    assert!(
                        judge(t, &ty),
                        "{path:?} {} at {loc}: thread does not follow itself",
                        net.name
                    );
                    seen += 1;
                }
            }
        }
    }
    assert!(seen > 20, "corpus gave only {seen} unary-input threads");
}
