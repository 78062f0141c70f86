//! Frame-level identity correspondence between tracker output and ground
//! truth.

use std::collections::{BTreeMap, HashMap};

use super::assign;
use crate::state::Trajectory;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityReport {
    /// Ground-truth (agent, frame) pairs.
    pub truth_frames: usize,
    /// Pairs matched to some track within the gate.
    pub matched_frames: usize,
    /// Pairs matched to the track that covers the agent most often.
    pub correct_frames: usize,
    /// Changes of matched track id along each agent's matched frames.
    pub id_switches: usize,
}

impl IdentityReport {
    pub fn coverage(&self) -> f64 {
        ratio(self.matched_frames, self.truth_frames)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct_frames, self.truth_frames)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Matches track positions to truth positions frame by frame (minimum total
/// distance, pairs farther than `gate` meters excluded) and scores the
/// resulting identity assignment.
pub fn identity_correspondence(truth: &[Trajectory], tracks: &[Trajectory], gate: f64) -> IdentityReport {
    let mut frames: BTreeMap<i64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, t) in truth.iter().enumerate() {
        for &(f, _) in t.points() {
            frames.entry(f).or_default().0.push(i);
        }
    }
    for (j, t) in tracks.iter().enumerate() {
        for &(f, _) in t.points() {
            if let Some(e) = frames.get_mut(&f) {
                e.1.push(j);
            }
        }
    }

    let mut truth_frames = 0;
    let mut matched: Vec<Vec<u64>> = vec![Vec::new(); truth.len()];
    for (&f, (gt, tr)) in &frames {
        truth_frames += gt.len();
        if tr.is_empty() {
            continue;
        }
        let cost: Vec<Vec<f64>> = gt
            .iter()
            .map(|&i| {
                let p = truth[i].position_at(f).expect("present");
                tr.iter()
                    .map(|&j| {
                        let d = tracks[j].position_at(f).expect("present").distance(p);
                        if d <= gate {
                            d
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        for (r, c) in assign(&cost, f64::INFINITY).matches {
            matched[gt[r]].push(tracks[tr[c]].agent_id);
        }
    }

    let mut matched_frames = 0;
    let mut correct_frames = 0;
    let mut id_switches = 0;
    for ids in &matched {
        matched_frames += ids.len();
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for &id in ids {
            *counts.entry(id).or_default() += 1;
        }
        correct_frames += counts.values().copied().max().unwrap_or(0);
        id_switches += ids.windows(2).filter(|w| w[0] != w[1]).count();
    }
    IdentityReport {
        truth_frames,
        matched_frames,
        correct_frames,
        id_switches,
    }
}
