//! The explicit knowledge base: semantic bases (Sebs), the refinement
//! partial order between them, and the importance/age lifecycle.
//!
//! A [`KnowledgeBase`] holds two codebooks, one per [`Granularity`]. Coarse
//! Sebs describe 32×32 patches and fine Sebs 16×16 patches. A fine Seb is
//! below a coarse Seb in the refinement order when it quantizes one of the
//! coarse centroid's quadrants; only those covering pairs are stored.

mod info;
mod lifecycle;
pub(crate) mod poset;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::bits_for_count;
use crate::semcodec::kmeans::squared_distance;

pub use info::{empirical_mutual_information, InfoEstimate};
pub use lifecycle::{generate_candidates, Candidate};
pub use poset::PosetReport;

pub type SebId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KbError {
    #[error("unknown Seb id {0}")]
    UnknownSeb(SebId),
    #[error("Seb {id} is not {expected:?}")]
    WrongGranularity { id: SebId, expected: Granularity },
    #[error("duplicate Seb id {0}")]
    DuplicateSeb(SebId),
    #[error("no {0:?} Sebs in the knowledge base")]
    EmptyCodebook(Granularity),
    #[error("joint count table is empty or sums to zero")]
    EmptyTable,
    #[error("joint count table rows have unequal lengths")]
    RaggedTable,
    #[error("no feature vectors supplied")]
    EmptyInput,
    #[error("feature dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("centroid component {0} outside [0, 1]")]
    CentroidRange(f32),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{count} Sebs do not fit {width}-bit labels")]
    LabelSpace { count: usize, width: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    Coarse,
    Fine,
}

impl Granularity {
    pub const ALL: [Granularity; 2] = [Granularity::Coarse, Granularity::Fine];

    /// Side length in pixels of the patch this granularity describes.
    pub fn patch_side(self) -> usize {
        match self {
            Granularity::Coarse => 32,
            Granularity::Fine => 16,
        }
    }

    pub fn patch_area(self) -> usize {
        self.patch_side() * self.patch_side()
    }

    pub fn wire_code(self) -> u8 {
        match self {
            Granularity::Coarse => 0,
            Granularity::Fine => 1,
        }
    }

    pub fn from_wire_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Granularity::Coarse),
            1 => Some(Granularity::Fine),
            _ => None,
        }
    }
}

/// One semantic base: a centroid in patch-feature space plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seb {
    pub id: SebId,
    pub granularity: Granularity,
    pub centroid: Vec<f32>,
    pub importance: f32,
    /// Messages since this Seb was last used.
    pub age: u32,
    /// Code word carried in the bitstream for this Seb.
    pub label: u32,
}

impl Seb {
    pub fn new(id: SebId, granularity: Granularity, centroid: Vec<f32>, importance: f32) -> Self {
        Self {
            id,
            granularity,
            centroid,
            importance,
            age: 0,
            label: 0,
        }
    }

    fn validate(&self) -> Result<(), KbError> {
        if self.centroid.len() != self.granularity.patch_area() {
            return Err(KbError::DimensionMismatch {
                expected: self.granularity.patch_area(),
                got: self.centroid.len(),
            });
        }
        if let Some(&bad) = self.centroid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(KbError::CentroidRange(bad));
        }
        if !(0.0..=1.0).contains(&self.importance) {
            return Err(KbError::InvalidParams(format!(
                "importance {} outside [0, 1]",
                self.importance
            )));
        }
        Ok(())
    }
}

/// Hasse diagram of the refinement order: `(fine_id, coarse_id)` covering pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRelation {
    pub edges: BTreeSet<(SebId, SebId)>,
}

impl RefinementRelation {
    pub fn insert(&mut self, fine: SebId, coarse: SebId) {
        self.edges.insert((fine, coarse));
    }

    pub fn remove_incident(&mut self, id: SebId) {
        self.edges.retain(|&(f, c)| f != id && c != id);
    }

    /// Coarse Sebs that `fine` refines.
    pub fn parents(&self, fine: SebId) -> impl Iterator<Item = SebId> + '_ {
        self.edges
            .iter()
            .filter(move |&&(f, _)| f == fine)
            .map(|&(_, c)| c)
    }

    /// Fine Sebs refining `coarse`.
    pub fn children(&self, coarse: SebId) -> impl Iterator<Item = SebId> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, c)| c == coarse)
            .map(|&(f, _)| f)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbParams {
    pub decay_lambda: f64,
    pub prune_threshold: f64,
    pub admission_factor: f64,
    pub trigger_factor: f64,
    pub trigger_window: u32,
}

impl Default for KbParams {
    fn default() -> Self {
        Self {
            decay_lambda: 0.01,
            prune_threshold: 0.05,
            admission_factor: 0.5,
            trigger_factor: 1.5,
            trigger_window: 10,
        }
    }
}

impl KbParams {
    pub fn validate(&self) -> Result<(), KbError> {
        let positive = self.decay_lambda > 0.0
            && self.prune_threshold > 0.0
            && self.admission_factor > 0.0
            && self.trigger_factor > 0.0
            && self.trigger_window > 0;
        if !positive || self.prune_threshold >= 1.0 {
            return Err(KbError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Versioned set of Sebs plus their refinement order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub version: u32,
    pub sebs: BTreeMap<SebId, Seb>,
    pub relation: RefinementRelation,
    pub params: KbParams,
    /// Mean coarse quantization MSE over the training corpus.
    pub baseline_distortion: f64,
}

impl KnowledgeBase {
    pub fn new(params: KbParams) -> Self {
        Self {
            version: 0,
            sebs: BTreeMap::new(),
            relation: RefinementRelation::default(),
            params,
            baseline_distortion: 0.0,
        }
    }

    /// Inserts a Seb, checking its shape and id. Labels and edges are not
    /// recomputed; see [`KnowledgeBase::apply_update`] for that.
    pub fn insert(&mut self, seb: Seb) -> Result<(), KbError> {
        seb.validate()?;
        if self.sebs.contains_key(&seb.id) {
            return Err(KbError::DuplicateSeb(seb.id));
        }
        self.sebs.insert(seb.id, seb);
        Ok(())
    }

    pub fn get(&self, id: SebId) -> Result<&Seb, KbError> {
        self.sebs.get(&id).ok_or(KbError::UnknownSeb(id))
    }

    /// Sebs of one granularity in ascending id order.
    pub fn iter_granularity(&self, g: Granularity) -> impl Iterator<Item = &Seb> {
        self.sebs.values().filter(move |s| s.granularity == g)
    }

    pub fn count(&self, g: Granularity) -> usize {
        self.iter_granularity(g).count()
    }

    pub fn bits_per_index(&self, g: Granularity) -> u32 {
        bits_for_count(self.count(g))
    }

    /// Next unused id: one past the largest id present.
    pub fn next_id(&self) -> SebId {
        self.sebs.keys().next_back().map_or(0, |&id| id + 1)
    }

    /// Nearest Seb of granularity `g` to `feature` (Euclidean, lowest id on ties).
    pub fn nearest(&self, g: Granularity, feature: &[f32]) -> Result<(SebId, f64), KbError> {
        let mut best: Option<(SebId, f64)> = None;
        for seb in self.iter_granularity(g) {
            if seb.centroid.len() != feature.len() {
                return Err(KbError::DimensionMismatch {
                    expected: seb.centroid.len(),
                    got: feature.len(),
                });
            }
            let d = squared_distance(feature, &seb.centroid);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((seb.id, d));
            }
        }
        best.ok_or(KbError::EmptyCodebook(g))
    }

    pub fn check_poset_axioms(&self) -> PosetReport {
        poset::check_poset_axioms(self)
    }

    pub fn refine(&mut self, coarse_id: SebId) -> Result<[SebId; 4], KbError> {
        poset::refine(self, coarse_id)
    }

    /// Drops every edge and re-derives them by refining each coarse Seb.
    pub fn rebuild_relation(&mut self) -> Result<(), KbError> {
        self.relation.edges.clear();
        if self.count(Granularity::Fine) == 0 {
            return Ok(());
        }
        let coarse: Vec<SebId> = self.iter_granularity(Granularity::Coarse).map(|s| s.id).collect();
        for id in coarse {
            self.refine(id)?;
        }
        Ok(())
    }

    pub fn decay_and_refresh(&mut self, used: &BTreeMap<SebId, f64>) {
        lifecycle::decay_and_refresh(self, used)
    }

    pub fn prune_selection(&self) -> Vec<SebId> {
        lifecycle::prune_selection(self)
    }

    pub fn prune(&mut self) -> Result<Vec<SebId>, KbError> {
        lifecycle::prune(self)
    }

    pub fn apply_update(
        &mut self,
        candidates: &[Candidate],
        removals: &[SebId],
    ) -> Result<u32, KbError> {
        lifecycle::apply_update(self, candidates, removals)
    }

    /// Lower-level update used by the sync protocol: Sebs arrive with ids
    /// already chosen by the sender.
    pub fn apply_changes(
        &mut self,
        added: Vec<Seb>,
        removals: &[SebId],
        importance_updates: &[(SebId, f32)],
    ) -> Result<u32, KbError> {
        lifecycle::apply_changes(self, added, removals, importance_updates)
    }
}
