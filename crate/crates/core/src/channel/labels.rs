//! Seb-wise protection: code words for Sebs chosen so that the most
//! important Sebs sit far apart in Hamming distance.

use crate::kb::{Granularity, KbError, KnowledgeBase, SebId};

/// The first `count` labels of the greedy max-min sequence over `width`-bit
/// words. Each label maximizes its minimum Hamming distance to the labels
/// before it; ties go to the smallest value.
pub fn greedy_label_sequence(count: usize, width: u32) -> Result<Vec<u32>, KbError> {
    if width > 24 || count > 1usize << width {
        return Err(KbError::LabelSpace { count, width });
    }
    let size = 1usize << width;
    let mut used = vec![false; size];
    // Minimum distance from every word to the labels assigned so far.
    let mut min_dist = vec![u32::MAX; size];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(u32, usize)> = None;
        for v in 0..size {
            if !used[v] && best.is_none_or(|(d, _)| min_dist[v] > d) {
                best = Some((min_dist[v], v));
            }
        }
        let (_, label) = best.expect("count fits the label space");
        used[label] = true;
        for (v, d) in min_dist.iter_mut().enumerate() {
            *d = (*d).min((v ^ label).count_ones());
        }
        out.push(label as u32);
    }
    Ok(out)
}

/// Seb ids of one granularity, most important first, lowest id on ties.
pub fn importance_order(kb: &KnowledgeBase, g: Granularity) -> Vec<SebId> {
    let mut sebs: Vec<(f32, SebId)> = kb.iter_granularity(g).map(|s| (s.importance, s.id)).collect();
    sebs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    sebs.into_iter().map(|(_, id)| id).collect()
}

/// Assigns labels of width `bits_per_index(g)` to every Seb of granularity `g`.
pub fn assign_labels(kb: &mut KnowledgeBase, g: Granularity) -> Result<(), KbError> {
    let width = kb.bits_per_index(g);
    let order = importance_order(kb, g);
    let labels = greedy_label_sequence(order.len(), width)?;
    for (id, label) in order.into_iter().zip(labels) {
        kb.sebs.get_mut(&id).expect("id from this kb").label = label;
    }
    Ok(())
}

/// Smallest pairwise Hamming distance in `labels`, or `None` for fewer than two.
pub fn min_pairwise_distance(labels: &[u32]) -> Option<u32> {
    let mut best = None::<u32>;
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let d = (a ^ b).count_ones();
            best = Some(best.map_or(d, |m| m.min(d)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KbParams, Seb};
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn kb_with(importances: &[f32]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(KbParams::default());
        for (i, &imp) in importances.iter().enumerate() {
            kb.insert(Seb::new(i as SebId, Granularity::Fine, vec![0.5; 256], imp)).unwrap();
        }
        kb
    }

    #[test]
    fn two_labels_in_three_bits_are_antipodal() {
        assert_eq!(greedy_label_sequence(2, 3).unwrap(), vec![0b000, 0b111]);
    }

    #[test]
    fn pigeonhole_fills_two_bits() {
        let mut l = greedy_label_sequence(4, 2).unwrap();
        assert_eq!(min_pairwise_distance(&l), Some(1));
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_sebs_is_an_error() {
        assert!(matches!(greedy_label_sequence(5, 2), Err(KbError::LabelSpace { count: 5, width: 2 })));
    }

    /// Independent restatement: recompute every candidate's min distance
    /// from scratch at each step.
    fn greedy_oracle(count: usize, width: u32) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for _ in 0..count {
            let pick = (0..1u32 << width)
                .filter(|v| !out.contains(v))
                .max_by(|a, b| {
                    let da = out.iter().map(|l| (l ^ a).count_ones()).min().unwrap_or(u32::MAX);
                    let db = out.iter().map(|l| (l ^ b).count_ones()).min().unwrap_or(u32::MAX);
                    da.cmp(&db).then(b.cmp(a))
                })
                .unwrap();
            out.push(pick);
        }
        out
    }

    #[test]
    fn eight_in_six_bits_matches_oracle() {
        let got = greedy_label_sequence(8, 6).unwrap();
        let want = greedy_oracle(8, 6);
        assert_eq!(got, want);
        assert!(min_pairwise_distance(&got[..4]) >= min_pairwise_distance(&want[..4]));
        // 000000, 111111, then two words at distance 3 from both.
        assert_eq!(&got[..2], &[0, 63]);
        assert_eq!(min_pairwise_distance(&got[..4]), Some(3));
    }

    #[test]
    fn labels_follow_importance_order() {
        let mut kb = kb_with(&[0.1, 0.9, 0.9, 0.5]);
        assign_labels(&mut kb, Granularity::Fine).unwrap();
        // Order: id 1, id 2 (tie by id), id 3, id 0.
        let seq = greedy_label_sequence(4, 2).unwrap();
        let labels: Vec<u32> = [1, 2, 3, 0].iter().map(|id| kb.sebs[id].label).collect();
        assert_eq!(labels, seq);
    }

    #[test]
    fn single_seb_gets_empty_label() {
        let mut kb = kb_with(&[0.3]);
        assign_labels(&mut kb, Granularity::Fine).unwrap();
        assert_eq!(kb.bits_per_index(Granularity::Fine), 0);
        assert_eq!(kb.sebs[&0].label, 0);
    }

    #[test]
    fn greedy_prefix_beats_identity_on_random_kbs() {
        let mut rng = SimRng::new(5);
        for _ in 0..100 {
            let n = 2 + rng.below(63);
            let imps: Vec<f32> = (0..n).map(|_| rng.uniform() as f32).collect();
            let mut kb = kb_with(&imps);
            assign_labels(&mut kb, Granularity::Fine).unwrap();
            let order = importance_order(&kb, Granularity::Fine);
            let q = n.div_ceil(4).max(2);
            let greedy: Vec<u32> = order[..q].iter().map(|id| kb.sebs[id].label).collect();
            let identity: Vec<u32> = order[..q].iter().map(|&id| id).collect();
            assert!(min_pairwise_distance(&greedy) >= min_pairwise_distance(&identity));
        }
    }

    proptest! {
        #[test]
        fn assignment_is_injective_and_in_range(n in 1usize..80) {
            let width = crate::bits::bits_for_count(n);
            let labels = greedy_label_sequence(n, width).unwrap();
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), n);
            prop_assert!(labels.iter().all(|&l| u64::from(l) < 1u64 << width));
        }
    }
}
