//! Keeping knowledge-base replicas identical: update requests, DELTA and
//! FULL messages on the SEBK wire format, and their application.
//!
//! ```text
//! "SEBK" | u8 format=1 | u8 kind | u32 kb_version_base | body | u32 CRC-32
//!
//! REQUEST  f32 statistic
//! DELTA    u16 n_add    { seb }*
//!          u16 n_remove { u32 id }*
//!          u16 n_update { u32 id, f32 importance }*
//! FULL     u32 n_sebs   { seb }*        (n_parents always 0; edges below)
//!          u32 n_edges  { u32 fine, u32 coarse }*   ascending
//!          { u32 label }*                            one per Seb, id order
//!          f64 baseline_distortion
//!          f64 decay_lambda, prune_threshold, admission_factor, trigger_factor
//!          u32 trigger_window
//!
//! seb = u32 id | u8 granularity | f32 importance | u16 dim | dim × f32
//!       | u8 n_parents | n_parents × u32
//! ```
//! All integers and floats are little-endian. The FULL body is the
//! canonical serialization of a knowledge base; [`kb_hash`] is its SHA-256.
//! Seb ages are local bookkeeping and are not part of it.

use std::collections::{BTreeMap, VecDeque};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kb::{Candidate, Granularity, KbError, KbParams, KnowledgeBase, Seb, SebId};

pub const MAGIC: &[u8; 4] = b"SEBK";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("bad SEBK magic")]
    BadMagic,
    #[error("unsupported SEBK format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("truncated message")]
    Truncated,
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("stale replica: DELTA is based on version {base}, replica is at {local}")]
    Stale { base: u32, local: u32 },
    #[error("message too large for the wire format: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Request = 0,
    Delta = 1,
    Full = 2,
}

/// A Seb as carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct SebRecord {
    pub id: SebId,
    pub granularity: Granularity,
    pub importance: f32,
    pub centroid: Vec<f32>,
    /// Coarse Sebs this one refines, as computed by the sender.
    pub parents: Vec<SebId>,
}

/// Everything in the canonical serialization of a knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct KbSnapshot {
    /// Records sorted by id, each with its label.
    pub sebs: Vec<(SebRecord, u32)>,
    pub edges: Vec<(SebId, SebId)>,
    pub baseline_distortion: f64,
    pub params: KbParams,
}

impl KbSnapshot {
    pub fn of(kb: &KnowledgeBase) -> Self {
        Self {
            sebs: kb
                .sebs
                .values()
                .map(|s| {
                    let rec = SebRecord {
                        id: s.id,
                        granularity: s.granularity,
                        importance: s.importance,
                        centroid: s.centroid.clone(),
                        parents: Vec::new(),
                    };
                    (rec, s.label)
                })
                .collect(),
            edges: kb.relation.edges.iter().copied().collect(),
            baseline_distortion: kb.baseline_distortion,
            params: kb.params.clone(),
        }
    }

    /// Rebuilds a knowledge base at `version`, with every age reset to 0.
    pub fn to_kb(&self, version: u32) -> Result<KnowledgeBase, SyncError> {
        self.params.validate()?;
        let mut kb = KnowledgeBase::new(self.params.clone());
        kb.version = version;
        kb.baseline_distortion = self.baseline_distortion;
        for (rec, label) in &self.sebs {
            let mut seb = Seb::new(rec.id, rec.granularity, rec.centroid.clone(), rec.importance);
            seb.label = *label;
            kb.insert(seb)?;
        }
        for g in Granularity::ALL {
            let width = kb.bits_per_index(g);
            let mut labels: Vec<u32> = kb.iter_granularity(g).map(|s| s.label).collect();
            if labels.iter().any(|&l| u64::from(l) >= 1u64 << width) {
                return Err(SyncError::Malformed(format!("{g:?} label wider than {width} bits")));
            }
            labels.sort_unstable();
            if labels.windows(2).any(|w| w[0] == w[1]) {
                return Err(SyncError::Malformed(format!("duplicate {g:?} label")));
            }
        }
        for &(f, c) in &self.edges {
            kb.relation.insert(f, c);
        }
        let report = kb.check_poset_axioms();
        if !report.valid {
            return Err(SyncError::Malformed(report.violations.join("; ")));
        }
        Ok(kb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncMessage {
    Request {
        kb_version_base: u32,
        statistic: f32,
    },
    Delta {
        kb_version_base: u32,
        added: Vec<SebRecord>,
        removed: Vec<SebId>,
        importance_updates: Vec<(SebId, f32)>,
    },
    Full {
        kb_version_base: u32,
        snapshot: KbSnapshot,
    },
}

impl SyncMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            SyncMessage::Request { .. } => MessageKind::Request,
            SyncMessage::Delta { .. } => MessageKind::Delta,
            SyncMessage::Full { .. } => MessageKind::Full,
        }
    }

    pub fn kb_version_base(&self) -> u32 {
        match self {
            SyncMessage::Request { kb_version_base, .. }
            | SyncMessage::Delta { kb_version_base, .. }
            | SyncMessage::Full { kb_version_base, .. } => *kb_version_base,
        }
    }
}

fn u16_len(n: usize, what: &str) -> Result<u16, SyncError> {
    u16::try_from(n).map_err(|_| SyncError::TooLarge(format!("{n} {what}")))
}

fn u32_len(n: usize, what: &str) -> Result<u32, SyncError> {
    u32::try_from(n).map_err(|_| SyncError::TooLarge(format!("{n} {what}")))
}

fn put_seb(out: &mut Vec<u8>, rec: &SebRecord) -> Result<(), SyncError> {
    out.extend_from_slice(&rec.id.to_le_bytes());
    out.push(rec.granularity.wire_code());
    out.extend_from_slice(&rec.importance.to_le_bytes());
    out.extend_from_slice(&u16_len(rec.centroid.len(), "centroid components")?.to_le_bytes());
    for v in &rec.centroid {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let n = u8::try_from(rec.parents.len()).map_err(|_| SyncError::TooLarge(format!("{} parents", rec.parents.len())))?;
    out.push(n);
    for p in &rec.parents {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(())
}

/// The canonical FULL body.
fn put_snapshot(out: &mut Vec<u8>, snap: &KbSnapshot) -> Result<(), SyncError> {
    out.extend_from_slice(&u32_len(snap.sebs.len(), "Sebs")?.to_le_bytes());
    for (rec, _) in &snap.sebs {
        put_seb(out, rec)?;
    }
    out.extend_from_slice(&u32_len(snap.edges.len(), "edges")?.to_le_bytes());
    for (f, c) in &snap.edges {
        out.extend_from_slice(&f.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
    for (_, label) in &snap.sebs {
        out.extend_from_slice(&label.to_le_bytes());
    }
    out.extend_from_slice(&snap.baseline_distortion.to_le_bytes());
    let p = &snap.params;
    for v in [p.decay_lambda, p.prune_threshold, p.admission_factor, p.trigger_factor] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&p.trigger_window.to_le_bytes());
    Ok(())
}

pub fn encode_message(msg: &SyncMessage) -> Result<Vec<u8>, SyncError> {
    let mut out = MAGIC.to_vec();
    out.push(FORMAT_VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&msg.kb_version_base().to_le_bytes());
    match msg {
        SyncMessage::Request { statistic, .. } => out.extend_from_slice(&statistic.to_le_bytes()),
        SyncMessage::Delta { added, removed, importance_updates, .. } => {
            out.extend_from_slice(&u16_len(added.len(), "added Sebs")?.to_le_bytes());
            for rec in added {
                put_seb(&mut out, rec)?;
            }
            out.extend_from_slice(&u16_len(removed.len(), "removals")?.to_le_bytes());
            for id in removed {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&u16_len(importance_updates.len(), "importance updates")?.to_le_bytes());
            for (id, v) in importance_updates {
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        SyncMessage::Full { snapshot, .. } => put_snapshot(&mut out, snapshot)?,
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SyncError> {
        let s = self.bytes.get(self.at..self.at + n).ok_or(SyncError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SyncError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SyncError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, SyncError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f32(&mut self) -> Result<f32, SyncError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SyncError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn seb(&mut self) -> Result<SebRecord, SyncError> {
        let id = self.u32()?;
        let code = self.u8()?;
        let granularity = Granularity::from_wire_code(code)
            .ok_or_else(|| SyncError::Malformed(format!("granularity code {code}")))?;
        let importance = self.f32()?;
        let dim = usize::from(self.u16()?);
        let centroid = (0..dim).map(|_| self.f32()).collect::<Result<_, _>>()?;
        let n = self.u8()?;
        let parents = (0..n).map(|_| self.u32()).collect::<Result<_, _>>()?;
        Ok(SebRecord { id, granularity, importance, centroid, parents })
    }

    fn snapshot(&mut self) -> Result<KbSnapshot, SyncError> {
        let n = self.u32()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            records.push(self.seb()?);
        }
        let n_edges = self.u32()? as usize;
        let mut edges = Vec::with_capacity(n_edges.min(1 << 16));
        for _ in 0..n_edges {
            edges.push((self.u32()?, self.u32()?));
        }
        let mut sebs = Vec::with_capacity(records.len());
        for rec in records {
            sebs.push((rec, self.u32()?));
        }
        let baseline_distortion = self.f64()?;
        let params = KbParams {
            decay_lambda: self.f64()?,
            prune_threshold: self.f64()?,
            admission_factor: self.f64()?,
            trigger_factor: self.f64()?,
            trigger_window: self.u32()?,
        };
        Ok(KbSnapshot { sebs, edges, baseline_distortion, params })
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<SyncMessage, SyncError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(SyncError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(SyncError::BadMagic);
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(SyncError::UnsupportedVersion(bytes[4]));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(SyncError::Crc { stored, computed });
    }
    let mut r = Reader { bytes: body, at: 6 };
    let kb_version_base = r.u32()?;
    let msg = match body[5] {
        0 => SyncMessage::Request { kb_version_base, statistic: r.f32()? },
        1 => {
            let n = r.u16()?;
            let added = (0..n).map(|_| r.seb()).collect::<Result<_, _>>()?;
            let n = r.u16()?;
            let removed = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
            let n = r.u16()?;
            let importance_updates = (0..n)
                .map(|_| Ok((r.u32()?, r.f32()?)))
                .collect::<Result<_, SyncError>>()?;
            SyncMessage::Delta { kb_version_base, added, removed, importance_updates }
        }
        2 => SyncMessage::Full { kb_version_base, snapshot: r.snapshot()? },
        k => return Err(SyncError::UnknownKind(k)),
    };
    if r.at != body.len() {
        return Err(SyncError::Malformed(format!("{} trailing bytes", body.len() - r.at)));
    }
    Ok(msg)
}

/// Canonical serialization of a knowledge base (the FULL body).
pub fn canonical_bytes(kb: &KnowledgeBase) -> Vec<u8> {
    let mut out = Vec::new();
    put_snapshot(&mut out, &KbSnapshot::of(kb)).expect("a knowledge base always fits the FULL layout");
    out
}

pub fn kb_hash(kb: &KnowledgeBase) -> [u8; 32] {
    Sha256::digest(canonical_bytes(kb)).into()
}

pub fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn full_message(kb: &KnowledgeBase) -> SyncMessage {
    SyncMessage::Full { kb_version_base: kb.version, snapshot: KbSnapshot::of(kb) }
}

/// Builds the DELTA that admits `candidates` and drops `removals` from the
/// sender's `kb`. It also restates the current importance of every
/// surviving Seb so that receivers relabel from the same values.
pub fn build_delta(kb: &KnowledgeBase, candidates: &[Candidate], removals: &[SebId]) -> Result<SyncMessage, SyncError> {
    let mut preview = kb.clone();
    preview.apply_update(candidates, removals)?;
    let first = kb.next_id();
    let added = candidates
        .iter()
        .zip(first..)
        .map(|(c, id)| SebRecord {
            id,
            granularity: c.granularity,
            importance: c.importance,
            centroid: c.centroid.clone(),
            parents: preview.relation.parents(id).collect(),
        })
        .collect();
    let mut removed = removals.to_vec();
    removed.sort_unstable();
    removed.dedup();
    let importance_updates = kb
        .sebs
        .values()
        .filter(|s| removed.binary_search(&s.id).is_err())
        .map(|s| (s.id, s.importance))
        .collect();
    Ok(SyncMessage::Delta { kb_version_base: kb.version, added, removed, importance_updates })
}

/// Applies an update message. Nothing changes on error.
///
/// A DELTA must be based on the replica's current version; a FULL replaces
/// the replica outright and takes the message's version.
pub fn apply_message(kb: &mut KnowledgeBase, msg: &SyncMessage) -> Result<u32, SyncError> {
    match msg {
        SyncMessage::Request { .. } => Err(SyncError::Malformed("REQUEST carries no update".into())),
        SyncMessage::Delta { kb_version_base, added, removed, importance_updates } => {
            if *kb_version_base != kb.version {
                return Err(SyncError::Stale { base: *kb_version_base, local: kb.version });
            }
            let sebs = added
                .iter()
                .map(|r| Seb::new(r.id, r.granularity, r.centroid.clone(), r.importance))
                .collect();
            let mut next = kb.clone();
            next.apply_changes(sebs, removed, importance_updates)?;
            for rec in added {
                let mut got: Vec<SebId> = next.relation.parents(rec.id).collect();
                let mut want = rec.parents.clone();
                got.sort_unstable();
                want.sort_unstable();
                if got != want {
                    return Err(SyncError::Malformed(format!(
                        "Seb {} refines {got:?} here but {want:?} at the sender",
                        rec.id
                    )));
                }
            }
            *kb = next;
            Ok(kb.version)
        }
        SyncMessage::Full { kb_version_base, snapshot } => {
            *kb = snapshot.to_kb(*kb_version_base)?;
            Ok(kb.version)
        }
    }
}

/// Sliding window of per-image quantization distortions.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    pub window: VecDeque<f64>,
    pub capacity: usize,
    pub baseline: f64,
    pub factor: f64,
}

impl TriggerState {
    pub fn new(baseline: f64, params: &KbParams) -> Self {
        Self {
            window: VecDeque::with_capacity(params.trigger_window as usize),
            capacity: params.trigger_window as usize,
            baseline,
            factor: params.trigger_factor,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().sum::<f64>() / self.window.len() as f64
        }
    }

    /// Clears the window and adopts a new baseline, after an update.
    pub fn reset(&mut self, baseline: f64) {
        self.window.clear();
        self.baseline = baseline;
    }

    /// Pushes one distortion; true iff the window is full and its mean
    /// exceeds `factor × baseline`.
    pub fn should_request_update(&mut self, distortion: f64) -> bool {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(distortion);
        self.window.len() == self.capacity && self.mean() > self.factor * self.baseline
    }

    pub fn request(&self, kb_version: u32) -> SyncMessage {
        SyncMessage::Request { kb_version_base: kb_version, statistic: self.mean() as f32 }
    }
}

/// Seb id to mean importance of the patches it encoded; the usage map a
/// receiver cannot compute but a transmitter can.
pub type Usage = BTreeMap<SebId, f64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::labels::assign_labels;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn random_kb(seed: u64, coarse: usize, fine: usize) -> KnowledgeBase {
        let mut rng = SimRng::new(seed);
        let mut kb = KnowledgeBase::new(KbParams::default());
        let mut id = 0;
        for (g, n) in [(Granularity::Coarse, coarse), (Granularity::Fine, fine)] {
            for _ in 0..n {
                let c = (0..g.patch_area()).map(|_| rng.uniform() as f32).collect();
                kb.insert(Seb::new(id, g, c, rng.uniform() as f32)).unwrap();
                id += 1;
            }
        }
        for g in Granularity::ALL {
            assign_labels(&mut kb, g).unwrap();
        }
        kb.rebuild_relation().unwrap();
        kb
    }

    fn candidate(seed: u64, g: Granularity) -> Candidate {
        let mut rng = SimRng::new(seed);
        Candidate {
            granularity: g,
            centroid: (0..g.patch_area()).map(|_| rng.uniform() as f32).collect(),
            importance: 0.6,
            novelty: 1.0,
        }
    }

    #[test]
    fn empty_delta_layout() {
        let msg = SyncMessage::Delta { kb_version_base: 7, added: vec![], removed: vec![], importance_updates: vec![] };
        let bytes = encode_message(&msg).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 6 + 4);
        assert_eq!(&bytes[..6], b"SEBK\x01\x01");
        assert_eq!(&bytes[6..10], &7u32.to_le_bytes());
        assert_eq!(&bytes[10..16], &[0; 6]);
        assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn request_layout() {
        let msg = SyncMessage::Request { kb_version_base: 1, statistic: 0.25 };
        let bytes = encode_message(&msg).unwrap();
        assert_eq!(&bytes[10..14], &0.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 18);
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let kb = random_kb(1, 2, 2);
        let bytes = encode_message(&build_delta(&kb, &[candidate(2, Granularity::Fine)], &[0]).unwrap()).unwrap();
        for i in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[i / 8] ^= 0x80 >> (i % 8);
            assert!(decode_message(&b).is_err(), "flip {i} passed");
        }
    }

    #[test]
    fn decode_errors() {
        let bytes = encode_message(&SyncMessage::Request { kb_version_base: 0, statistic: 1.0 }).unwrap();
        assert_eq!(decode_message(&bytes[..5]), Err(SyncError::Truncated));
        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(decode_message(&b), Err(SyncError::BadMagic));
        let mut b = bytes.clone();
        b[5] = 9;
        let n = b.len();
        let crc = crc32fast::hash(&b[..n - 4]);
        b[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_message(&b), Err(SyncError::UnknownKind(9)));
    }

    #[test]
    fn replicas_applying_the_same_delta_agree() {
        let mut ap = random_kb(3, 4, 4);
        let mut ue = ap.clone();
        let msg = build_delta(&ap, &[candidate(4, Granularity::Coarse), candidate(5, Granularity::Fine)], &[1]).unwrap();
        let wire = decode_message(&encode_message(&msg).unwrap()).unwrap();
        assert_eq!(apply_message(&mut ap, &wire).unwrap(), 1);
        assert_eq!(apply_message(&mut ue, &wire).unwrap(), 1);
        assert_eq!(kb_hash(&ap), kb_hash(&ue));
        assert_eq!(ap.count(Granularity::Coarse), 4);
        assert!(ap.check_poset_axioms().valid);
    }

    #[test]
    fn delta_restates_importance_after_local_decay() {
        let mut ap = random_kb(6, 4, 4);
        let mut ue = ap.clone();
        for _ in 0..20 {
            ap.decay_and_refresh(&Usage::new());
        }
        assert_ne!(kb_hash(&ap), kb_hash(&ue));
        let msg = build_delta(&ap, &[], &[]).unwrap();
        apply_message(&mut ap, &msg).unwrap();
        apply_message(&mut ue, &msg).unwrap();
        assert_eq!(kb_hash(&ap), kb_hash(&ue));
    }

    #[test]
    fn stale_delta_then_full_recovers() {
        let mut ap = random_kb(7, 3, 3);
        let mut ue = ap.clone();
        let first = build_delta(&ap, &[candidate(8, Granularity::Fine)], &[]).unwrap();
        apply_message(&mut ap, &first).unwrap();
        // The UE misses `first`.
        let second = build_delta(&ap, &[], &[0]).unwrap();
        apply_message(&mut ap, &second).unwrap();
        let before = ue.clone();
        assert_eq!(apply_message(&mut ue, &second), Err(SyncError::Stale { base: 1, local: 0 }));
        assert_eq!(ue, before);
        let full = decode_message(&encode_message(&full_message(&ap)).unwrap()).unwrap();
        assert_eq!(apply_message(&mut ue, &full).unwrap(), 2);
        assert_eq!(kb_hash(&ue), kb_hash(&ap));
    }

    #[test]
    fn full_sets_the_embedded_version() {
        let mut src = random_kb(9, 2, 2);
        src.version = 41;
        let mut dst = random_kb(10, 5, 1);
        dst.version = 3;
        apply_message(&mut dst, &full_message(&src)).unwrap();
        assert_eq!(dst.version, 41);
        assert_eq!(kb_hash(&dst), kb_hash(&src));
    }

    #[test]
    fn request_is_not_applicable() {
        let mut kb = random_kb(11, 1, 1);
        assert!(apply_message(&mut kb, &SyncMessage::Request { kb_version_base: 0, statistic: 0.0 }).is_err());
    }

    #[test]
    fn trigger_rules() {
        let params = KbParams::default();
        let mut t = TriggerState::new(0.01, &params);
        for _ in 0..30 {
            assert!(!t.should_request_update(0.01));
        }
        let mut t = TriggerState::new(0.01, &params);
        for i in 0..10 {
            let fire = t.should_request_update(0.02);
            assert_eq!(fire, i == 9);
        }
        let mut t = TriggerState::new(0.01, &params);
        for _ in 0..9 {
            assert!(!t.should_request_update(1.0));
        }
        assert!(t.window.len() <= t.capacity);
    }

    #[test]
    fn hash_is_sha256_of_canonical_body() {
        let kb = random_kb(12, 2, 1);
        let full = encode_message(&full_message(&kb)).unwrap();
        let body = &full[HEADER_LEN..full.len() - 4];
        assert_eq!(body, &canonical_bytes(&kb)[..]);
        assert_eq!(kb_hash(&kb).to_vec(), Sha256::digest(body).to_vec());
        assert_eq!(hex(&[0x0f, 0xa0]), "0fa0");
    }

    fn arb_record() -> impl Strategy<Value = SebRecord> {
        (any::<u32>(), prop::bool::ANY, 0.0f32..=1.0, prop::collection::vec(0.0f32..=1.0, 0..40), prop::collection::vec(any::<u32>(), 0..5))
            .prop_map(|(id, fine, importance, centroid, parents)| SebRecord {
                id,
                granularity: if fine { Granularity::Fine } else { Granularity::Coarse },
                importance,
                centroid,
                parents,
            })
    }

    fn arb_message() -> impl Strategy<Value = SyncMessage> {
        prop_oneof![
            (any::<u32>(), any::<f32>().prop_filter("not NaN", |v| !v.is_nan()))
                .prop_map(|(b, s)| SyncMessage::Request { kb_version_base: b, statistic: s }),
            (
                any::<u32>(),
                prop::collection::vec(arb_record(), 0..4),
                prop::collection::vec(any::<u32>(), 0..6),
                prop::collection::vec((any::<u32>(), 0.0f32..=1.0), 0..6)
            )
                .prop_map(|(b, added, removed, importance_updates)| SyncMessage::Delta {
                    kb_version_base: b,
                    added,
                    removed,
                    importance_updates
                }),
            (any::<u32>(), prop::collection::vec((arb_record(), any::<u32>()), 0..4), prop::collection::vec((any::<u32>(), any::<u32>()), 0..6), 0.0f64..1.0, 1u32..50)
                .prop_map(|(b, sebs, edges, baseline, window)| {
                    let sebs = sebs.into_iter().map(|(mut r, l)| { r.parents.clear(); (r, l) }).collect();
                    SyncMessage::Full {
                        kb_version_base: b,
                        snapshot: KbSnapshot {
                            sebs,
                            edges,
                            baseline_distortion: baseline,
                            params: KbParams { trigger_window: window, ..KbParams::default() },
                        },
                    }
                }),
        ]
    }

    proptest! {
        #[test]
        fn wire_round_trip(msg in arb_message()) {
            let bytes = encode_message(&msg).unwrap();
            prop_assert_eq!(decode_message(&bytes).unwrap(), msg);
        }

        #[test]
        fn replicas_stay_equal(seed in any::<u64>(), steps in 1usize..4) {
            let mut ap = random_kb(seed, 3, 3);
            let mut ue = ap.clone();
            let mut rng = SimRng::new(seed ^ 1);
            for step in 0..steps {
                let g = if rng.uniform() < 0.5 { Granularity::Coarse } else { Granularity::Fine };
                let cands = vec![candidate(seed.wrapping_add(step as u64), g)];
                let removals: Vec<SebId> = ap.sebs.keys().copied().filter(|_| rng.uniform() < 0.2).take(1).collect();
                let ok_removal = removals.iter().all(|id| ap.count(ap.sebs[id].granularity) > 1);
                let removals = if ok_removal { removals } else { vec![] };
                let msg = decode_message(&encode_message(&build_delta(&ap, &cands, &removals).unwrap()).unwrap()).unwrap();
                apply_message(&mut ap, &msg).unwrap();
                apply_message(&mut ue, &msg).unwrap();
                prop_assert_eq!(kb_hash(&ap), kb_hash(&ue));
                prop_assert!(ap.check_poset_axioms().valid);
            }
        }
    }
}
