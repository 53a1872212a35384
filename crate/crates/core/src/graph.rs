//! Small directed-graph helpers over string-keyed nodes.

use std::collections::{BTreeMap, BTreeSet};

/// Adjacency as node -> nodes it depends on.
pub type DependencyMap = BTreeMap<String, BTreeSet<String>>;

/// Returns one cycle (first node repeated at the end) if the graph has any.
pub fn find_cycle(deps: &DependencyMap) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();

    fn visit<'a>(
        node: &'a str,
        deps: &'a DependencyMap,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        match marks.get(node) {
            Some(Mark::Done) => return None,
            Some(Mark::Active) => {
                let start = stack.iter().position(|n| *n == node).unwrap_or(0);
                let mut cycle: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                cycle.push(node.to_string());
                return Some(cycle);
            }
            None => {}
        }
        marks.insert(node, Mark::Active);
        stack.push(node);
        if let Some(next) = deps.get(node) {
            for n in next {
                if let Some(c) = visit(n, deps, marks, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        marks.insert(node, Mark::Done);
        None
    }

    let mut stack = Vec::new();
    for node in deps.keys() {
        if let Some(c) = visit(node, deps, &mut marks, &mut stack) {
            return Some(c);
        }
    }
    None
}

/// Dependency-first topological order (Kahn's algorithm, ties broken by name).
/// Nodes that only appear as dependencies are included. `None` on a cycle.
pub fn topological_order(deps: &DependencyMap) -> Option<Vec<String>> {
    let mut nodes: BTreeSet<&str> = deps.keys().map(String::as_str).collect();
    for ds in deps.values() {
        nodes.extend(ds.iter().map(String::as_str));
    }
    let mut remaining: BTreeMap<&str, usize> = nodes
        .iter()
        .map(|n| (*n, deps.get(*n).map_or(0, |d| d.len())))
        .collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (node, ds) in deps {
        for d in ds {
            dependents
                .entry(d.as_str())
                .or_default()
                .push(node.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = remaining
        .iter()
        .filter(|(_, c)| **c == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for dep in dependents.get(n).into_iter().flatten() {
            let c = remaining.get_mut(dep).expect("known node");
            *c -= 1;
            if *c == 0 {
                ready.insert(dep);
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}
