//! Knowledge-base evolution: candidate generation, importance decay,
//! pruning, and versioned update application.

use std::collections::{BTreeMap, BTreeSet};

use super::{Granularity, KbError, KnowledgeBase, Seb, SebId};
use crate::channel::labels::assign_labels;
use crate::semcodec::kmeans::{squared_distance, train_codebook, KMeansConfig};

/// A proposed Seb not yet admitted into a knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub granularity: Granularity,
    pub centroid: Vec<f32>,
    pub importance: f32,
    /// Euclidean distance to the nearest existing same-granularity centroid.
    pub novelty: f64,
}

/// Mean distance from each centroid to its nearest same-granularity neighbour.
fn mean_nearest_neighbor_distance(kb: &KnowledgeBase, g: Granularity) -> f64 {
    let centroids: Vec<&[f32]> = kb.iter_granularity(g).map(|s| s.centroid.as_slice()).collect();
    if centroids.len() < 2 {
        return 0.0;
    }
    let sum: f64 = centroids
        .iter()
        .enumerate()
        .map(|(i, a)| {
            centroids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| squared_distance(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    sum / centroids.len() as f64
}

/// Clusters a window of recent patch features and keeps the clusters that
/// are far from everything already in the knowledge base.
///
/// A candidate is admitted when its distance to the nearest existing
/// centroid exceeds `admission_factor` times the mean nearest-neighbour
/// distance among existing centroids. Exact duplicate candidates are merged.
pub fn generate_candidates(
    kb: &KnowledgeBase,
    features: &[Vec<f32>],
    importances: &[f32],
    granularity: Granularity,
    kmeans: &KMeansConfig,
) -> Result<Vec<Candidate>, KbError> {
    if features.is_empty() {
        return Err(KbError::EmptyInput);
    }
    let dim = granularity.patch_area();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(KbError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if importances.len() != features.len() {
        return Err(KbError::DimensionMismatch {
            expected: features.len(),
            got: importances.len(),
        });
    }

    let clustering = train_codebook(features, kmeans).map_err(|_| KbError::EmptyInput)?;
    let delta = kb.params.admission_factor * mean_nearest_neighbor_distance(kb, granularity);

    let mut sums = vec![(0.0f64, 0usize); clustering.centroids.len()];
    for (&a, &imp) in clustering.assignments.iter().zip(importances) {
        sums[a].0 += f64::from(imp);
        sums[a].1 += 1;
    }

    let mut out: Vec<Candidate> = Vec::new();
    for (centroid, (sum, n)) in clustering.centroids.into_iter().zip(sums) {
        let novelty = match kb.nearest(granularity, &centroid) {
            Ok((_, d)) => d.sqrt(),
            Err(KbError::EmptyCodebook(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if novelty <= delta || out.iter().any(|c| c.centroid == centroid) {
            continue;
        }
        let importance = if n == 0 { 0.0 } else { (sum / n as f64).clamp(0.0, 1.0) as f32 };
        out.push(Candidate {
            granularity,
            centroid,
            importance,
            novelty,
        });
    }
    Ok(out)
}

/// One message worth of ageing. `used` maps each Seb that encoded part of
/// the message to the mean importance of the patches it encoded.
pub(super) fn decay_and_refresh(kb: &mut KnowledgeBase, used: &BTreeMap<SebId, f64>) {
    let factor = (-kb.params.decay_lambda).exp();
    for seb in kb.sebs.values_mut() {
        match used.get(&seb.id) {
            Some(&patch_importance) => {
                seb.age = 0;
                let refreshed = patch_importance.clamp(0.0, 1.0) as f32;
                seb.importance = seb.importance.max(refreshed);
            }
            None => {
                seb.age = seb.age.saturating_add(1);
                seb.importance = (f64::from(seb.importance) * factor) as f32;
            }
        }
    }
}

/// Ids that fall below the prune threshold, sparing the most important Seb
/// of each granularity (lowest id on ties) when every one would go.
pub(super) fn prune_selection(kb: &KnowledgeBase) -> Vec<SebId> {
    let threshold = kb.params.prune_threshold;
    let mut removed = Vec::new();
    for g in Granularity::ALL {
        let sebs: Vec<&Seb> = kb.iter_granularity(g).collect();
        let below: Vec<SebId> = sebs
            .iter()
            .filter(|s| f64::from(s.importance) < threshold)
            .map(|s| s.id)
            .collect();
        if !sebs.is_empty() && below.len() == sebs.len() {
            let keep = sebs
                .iter()
                .fold(None::<&Seb>, |best, s| match best {
                    Some(b) if b.importance >= s.importance => Some(b),
                    _ => Some(s),
                })
                .map(|s| s.id);
            removed.extend(below.into_iter().filter(|&id| Some(id) != keep));
        } else {
            removed.extend(below);
        }
    }
    removed.sort_unstable();
    removed
}

pub(super) fn prune(kb: &mut KnowledgeBase) -> Result<Vec<SebId>, KbError> {
    let removed = prune_selection(kb);
    if !removed.is_empty() {
        apply_update(kb, &[], &removed)?;
    }
    Ok(removed)
}

pub(super) fn apply_update(
    kb: &mut KnowledgeBase,
    candidates: &[Candidate],
    removals: &[SebId],
) -> Result<u32, KbError> {
    let first = kb.next_id();
    let added = candidates
        .iter()
        .zip(first..)
        .map(|(c, id)| Seb::new(id, c.granularity, c.centroid.clone(), c.importance))
        .collect();
    apply_changes(kb, added, removals, &[])
}

/// Validates everything first so a rejected update leaves `kb` untouched.
pub(super) fn apply_changes(
    kb: &mut KnowledgeBase,
    added: Vec<Seb>,
    removals: &[SebId],
    importance_updates: &[(SebId, f32)],
) -> Result<u32, KbError> {
    let mut fresh = BTreeSet::new();
    for seb in &added {
        seb.validate()?;
        if kb.sebs.contains_key(&seb.id) || !fresh.insert(seb.id) {
            return Err(KbError::DuplicateSeb(seb.id));
        }
    }
    for &id in removals {
        if !kb.sebs.contains_key(&id) && !fresh.contains(&id) {
            return Err(KbError::UnknownSeb(id));
        }
    }
    for &(id, value) in importance_updates {
        if !kb.sebs.contains_key(&id) && !fresh.contains(&id) {
            return Err(KbError::UnknownSeb(id));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(KbError::InvalidParams(format!("importance {value} for Seb {id}")));
        }
    }

    let mut next = kb.clone();
    for mut seb in added {
        seb.age = 0;
        next.sebs.insert(seb.id, seb);
    }
    for &(id, value) in importance_updates {
        if let Some(seb) = next.sebs.get_mut(&id) {
            seb.importance = value;
        }
    }
    for &id in removals {
        next.sebs.remove(&id);
        next.relation.remove_incident(id);
    }
    for g in Granularity::ALL {
        assign_labels(&mut next, g)?;
    }
    next.rebuild_relation()?;
    next.version += 1;

    *kb = next;
    Ok(kb.version)
}
