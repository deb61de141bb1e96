#![allow(dead_code)]

use sebcom::channel::assign_labels;
use sebcom::kb::{Candidate, Granularity, KbParams, KnowledgeBase, Seb};
use sebcom::rng::SimRng;
use sebcom::semcodec::{CellCode, SemanticFrame};

pub fn random_centroid(rng: &mut SimRng, g: Granularity) -> Vec<f32> {
    (0..g.patch_area()).map(|_| rng.uniform() as f32).collect()
}

/// Labelled KB with `coarse` + `fine` random Sebs and a derived relation.
pub fn random_kb(rng: &mut SimRng, coarse: usize, fine: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new(KbParams::default());
    let mut id = 0;
    for (g, n) in [(Granularity::Coarse, coarse), (Granularity::Fine, fine)] {
        for _ in 0..n {
            let c = random_centroid(rng, g);
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

pub fn random_candidate(rng: &mut SimRng, g: Granularity) -> Candidate {
    Candidate {
        granularity: g,
        centroid: random_centroid(rng, g),
        importance: rng.uniform() as f32,
        novelty: 1.0,
    }
}

/// Removal set that leaves at least one Seb of each granularity.
pub fn random_removals(rng: &mut SimRng, kb: &KnowledgeBase) -> Vec<u32> {
    let mut out = Vec::new();
    for g in Granularity::ALL {
        let ids: Vec<u32> = kb.iter_granularity(g).map(|s| s.id).collect();
        for &id in ids.iter().skip(1) {
            if rng.uniform() < 0.2 {
                out.push(id);
            }
        }
    }
    out
}

pub fn random_frame(rng: &mut SimRng) -> SemanticFrame {
    let gw = 1 + rng.below(6);
    let gh = 1 + rng.below(6);
    let bc = rng.below(12) as u8;
    let bf = rng.below(10) as u8;
    let n = gw * gh;
    let label = |rng: &mut SimRng, bits: u8| (rng.next_u64() & ((1u64 << bits) - 1)) as u32;
    let cells = (0..n)
        .map(|_| {
            if rng.uniform() < 0.5 {
                CellCode::Coarse(label(rng, bc))
            } else {
                CellCode::Fine([label(rng, bf), label(rng, bf), label(rng, bf), label(rng, bf)])
            }
        })
        .collect();
    SemanticFrame {
        kb_version: rng.next_u64() as u32,
        original_width: 1 + rng.below(gw * 32),
        original_height: 1 + rng.below(gh * 32),
        grid_w: gw,
        grid_h: gh,
        bits_coarse: bc,
        bits_fine: bf,
        class_flags: (0..n).map(|_| rng.uniform() < 0.5).collect(),
        cells,
    }
}
