use std::collections::BTreeMap;

use super::{Granularity, KbError, KnowledgeBase, SebId};

/// Outcome of [`check_poset_axioms`].
///
/// Reflexivity and transitivity hold by construction of the closure, so the
/// only things that can fail are antisymmetry (a directed cycle among the
/// stored edges) and the granularity direction of individual edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosetReport {
    pub valid: bool,
    pub violations: Vec<String>,
}

pub(super) fn check_poset_axioms(kb: &KnowledgeBase) -> PosetReport {
    let mut violations = Vec::new();

    for &(lower, upper) in &kb.relation.edges {
        let (Some(l), Some(u)) = (kb.sebs.get(&lower), kb.sebs.get(&upper)) else {
            violations.push(format!("dangling edge ({lower}, {upper})"));
            continue;
        };
        match (l.granularity, u.granularity) {
            (Granularity::Fine, Granularity::Coarse) => {}
            (a, b) if a == b => {
                violations.push(format!("edge within granularity ({lower}, {upper})"))
            }
            _ => violations.push(format!("edge increases granularity ({lower}, {upper})")),
        }
    }

    if let Some(cycle) = find_cycle(&kb.relation.edges) {
        violations.push(format!("antisymmetry violated by cycle {cycle:?}"));
    }

    PosetReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Iterative three-colour DFS over the edge set. Returns one cycle if any.
fn find_cycle<'a>(edges: impl IntoIterator<Item = &'a (SebId, SebId)>) -> Option<Vec<SebId>> {
    let mut adj: BTreeMap<SebId, Vec<SebId>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default();
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark: BTreeMap<SebId, Mark> = adj.keys().map(|&k| (k, Mark::White)).collect();

    for &root in adj.keys() {
        if mark[&root] != Mark::White {
            continue;
        }
        let mut stack: Vec<(SebId, usize)> = vec![(root, 0)];
        mark.insert(root, Mark::Grey);
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            let succ = &adj[&node];
            if top.1 < succ.len() {
                let child = succ[top.1];
                top.1 += 1;
                match mark[&child] {
                    Mark::White => {
                        mark.insert(child, Mark::Grey);
                        stack.push((child, 0));
                    }
                    Mark::Grey => {
                        let start = stack.iter().position(|&(n, _)| n == child).unwrap_or(0);
                        return Some(stack[start..].iter().map(|&(n, _)| n).collect());
                    }
                    Mark::Black => {}
                }
            } else {
                mark.insert(node, Mark::Black);
                stack.pop();
            }
        }
    }
    None
}

/// Splits a coarse centroid into its four 16×16 quadrants (TL, TR, BL, BR).
pub(crate) fn quadrants(coarse: &[f32]) -> [Vec<f32>; 4] {
    let side = Granularity::Coarse.patch_side();
    let half = Granularity::Fine.patch_side();
    std::array::from_fn(|q| {
        let (oy, ox) = ((q / 2) * half, (q % 2) * half);
        let mut block = Vec::with_capacity(half * half);
        for y in 0..half {
            let row = (oy + y) * side + ox;
            block.extend_from_slice(&coarse[row..row + half]);
        }
        block
    })
}

pub(super) fn refine(kb: &mut KnowledgeBase, coarse_id: SebId) -> Result<[SebId; 4], KbError> {
    let coarse = kb.get(coarse_id)?;
    if coarse.granularity != Granularity::Coarse {
        return Err(KbError::WrongGranularity {
            id: coarse_id,
            expected: Granularity::Coarse,
        });
    }
    let blocks = quadrants(&coarse.centroid);
    let mut ids = [0; 4];
    for (slot, block) in ids.iter_mut().zip(&blocks) {
        *slot = kb.nearest(Granularity::Fine, block)?.0;
    }
    for &fine in &ids {
        kb.relation.insert(fine, coarse_id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KbParams, Seb};
    use crate::rng::SimRng;

    fn constant(g: Granularity, v: f32) -> Vec<f32> {
        vec![v; g.patch_area()]
    }

    fn kb_with(sebs: Vec<Seb>) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(KbParams::default());
        for s in sebs {
            kb.insert(s).unwrap();
        }
        kb
    }

    #[test]
    fn empty_relation_is_a_poset() {
        let kb = KnowledgeBase::new(KbParams::default());
        assert!(kb.check_poset_axioms().valid);
    }

    #[test]
    fn forest_is_valid() {
        let mut kb = kb_with(vec![
            Seb::new(0, Granularity::Coarse, constant(Granularity::Coarse, 0.1), 0.5),
            Seb::new(1, Granularity::Fine, constant(Granularity::Fine, 0.1), 0.5),
            Seb::new(2, Granularity::Fine, constant(Granularity::Fine, 0.2), 0.5),
        ]);
        kb.relation.insert(1, 0);
        kb.relation.insert(2, 0);
        let report = kb.check_poset_axioms();
        assert!(report.valid, "{:?}", report.violations);
    }

    #[test]
    fn edge_within_granularity_rejected() {
        let mut kb = kb_with(vec![
            Seb::new(0, Granularity::Coarse, constant(Granularity::Coarse, 0.1), 0.5),
            Seb::new(1, Granularity::Coarse, constant(Granularity::Coarse, 0.2), 0.5),
        ]);
        kb.relation.insert(0, 1);
        let report = kb.check_poset_axioms();
        assert!(!report.valid);
        assert!(report.violations[0].contains("edge within granularity"));
    }

    #[test]
    fn cycle_breaks_antisymmetry() {
        let mut kb = kb_with(vec![
            Seb::new(0, Granularity::Coarse, constant(Granularity::Coarse, 0.1), 0.5),
            Seb::new(1, Granularity::Fine, constant(Granularity::Fine, 0.2), 0.5),
        ]);
        kb.relation.insert(1, 0);
        kb.relation.insert(0, 1);
        let report = kb.check_poset_axioms();
        assert!(!report.valid);
        assert!(report.violations.iter().any(|v| v.contains("cycle")));
    }

    #[test]
    fn refine_exact_tiling() {
        let fines: Vec<Vec<f32>> = (0..4)
            .map(|q| constant(Granularity::Fine, 0.2 * (q + 1) as f32))
            .collect();
        // Assemble a coarse centroid whose quadrants are the fine centroids
        // 3, 0, 2, 1 (by id) in TL, TR, BL, BR order.
        let order = [3usize, 0, 2, 1];
        let mut coarse = vec![0.0f32; 1024];
        for (q, &f) in order.iter().enumerate() {
            for y in 0..16 {
                for x in 0..16 {
                    coarse[((q / 2) * 16 + y) * 32 + (q % 2) * 16 + x] = fines[f][y * 16 + x];
                }
            }
        }
        let mut sebs: Vec<Seb> = fines
            .into_iter()
            .enumerate()
            .map(|(i, c)| Seb::new(i as SebId, Granularity::Fine, c, 0.5))
            .collect();
        sebs.push(Seb::new(10, Granularity::Coarse, coarse, 0.5));
        let mut kb = kb_with(sebs);
        assert_eq!(kb.refine(10).unwrap(), [3, 0, 2, 1]);
        assert_eq!(kb.relation.children(10).count(), 4);
    }

    #[test]
    fn refine_tie_breaks_to_lowest_id() {
        let mut kb = kb_with(vec![
            Seb::new(0, Granularity::Fine, constant(Granularity::Fine, 0.0), 0.5),
            Seb::new(1, Granularity::Fine, constant(Granularity::Fine, 1.0), 0.5),
            Seb::new(2, Granularity::Coarse, constant(Granularity::Coarse, 0.5), 0.5),
        ]);
        assert_eq!(kb.refine(2).unwrap(), [0, 0, 0, 0]);
        // Four identical pairs collapse to a single covering edge.
        assert_eq!(kb.relation.len(), 1);
    }

    #[test]
    fn refine_matches_brute_force_nearest() {
        let mut rng = SimRng::new(11);
        let mut sebs: Vec<Seb> = (0..8)
            .map(|i| {
                let c = (0..256).map(|_| rng.uniform() as f32).collect();
                Seb::new(i, Granularity::Fine, c, 0.5)
            })
            .collect();
        let coarse: Vec<f32> = (0..1024).map(|_| rng.uniform() as f32).collect();
        sebs.push(Seb::new(100, Granularity::Coarse, coarse.clone(), 0.5));
        let fines: Vec<Vec<f32>> = sebs[..8].iter().map(|s| s.centroid.clone()).collect();
        let mut kb = kb_with(sebs);

        // Oracle: slice quadrants by explicit pixel coordinates and scan all 8.
        let mut expected = [0u32; 4];
        for (q, slot) in expected.iter_mut().enumerate() {
            let mut best = (u32::MAX, f64::INFINITY);
            for (id, f) in fines.iter().enumerate() {
                let mut d = 0.0f64;
                for y in 0..16 {
                    for x in 0..16 {
                        let c = coarse[((q / 2) * 16 + y) * 32 + (q % 2) * 16 + x] as f64;
                        let diff = c - f[y * 16 + x] as f64;
                        d += diff * diff;
                    }
                }
                if d < best.1 {
                    best = (id as u32, d);
                }
            }
            *slot = best.0;
        }
        assert_eq!(kb.refine(100).unwrap(), expected);
    }

    #[test]
    fn refine_errors() {
        let mut kb = kb_with(vec![Seb::new(
            0,
            Granularity::Fine,
            constant(Granularity::Fine, 0.0),
            0.5,
        )]);
        assert_eq!(kb.refine(9), Err(KbError::UnknownSeb(9)));
        assert!(matches!(kb.refine(0), Err(KbError::WrongGranularity { .. })));
    }
}
