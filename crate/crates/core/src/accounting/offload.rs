//! Selective knowledge offloading and the annotation loss filter.
//!
//! Offloading ranks annotated facts by how much harder their continuation is
//! for a plain model than for a lookup-augmented one, and externalizes the
//! hardest fraction. The corrector filter drops the highest-loss fraction of
//! candidate calls.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AccountingError, ScoredSequence};
use crate::markup::TokenCategory;

/// Number of original tokens after a lookup that the loss difference covers.
pub const FOLLOWING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaLossRecord {
    pub triplet_id: u64,
    /// Mean loss of the plain model minus mean loss of the lookup model over
    /// the window following the call.
    pub delta: f64,
    /// Tokens actually averaged; shorter than the window at document end.
    #[serde(default)]
    pub window: usize,
}

/// `⌈ratio · n⌉`, with products within 1e-9 of an integer snapped to it so
/// that e.g. `0.7 · 10` selects 7.
pub fn top_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

fn check_fraction(name: &str, f: f64, upper_inclusive: bool) -> Result<(), AccountingError> {
    let ok = f >= 0.0 && if upper_inclusive { f <= 1.0 } else { f < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(AccountingError::InvalidArgument(format!("{name} {f} out of range")))
    }
}

/// One record per lookup call in `lookup_seq`, comparing the first
/// `window` original tokens after each `<|db_end|>` with the same original
/// positions in `plain_seq` (the unannotated document).
pub fn delta_loss_records(
    lookup_seq: &ScoredSequence,
    plain_seq: &ScoredSequence,
    window: usize,
) -> Result<Vec<DeltaLossRecord>, AccountingError> {
    let plain = plain_seq.tokens();
    if plain.iter().any(|t| t.category != TokenCategory::Original) {
        return Err(AccountingError::InvalidArgument(
            "plain sequence must contain original tokens only".into(),
        ));
    }
    if plain.len() != lookup_seq.original_token_count() {
        return Err(AccountingError::InvalidArgument(format!(
            "plain sequence has {} tokens, annotated sequence has {} original tokens",
            plain.len(),
            lookup_seq.original_token_count()
        )));
    }
    // (original ordinal, logprob) for every original token of the annotated sequence
    let mut originals = Vec::with_capacity(plain.len());
    let mut call_ends = Vec::new();
    for t in lookup_seq.tokens() {
        match t.category {
            TokenCategory::Original => originals.push(t.logprob),
            TokenCategory::DbEnd => call_ends.push(originals.len()),
            _ => {}
        }
    }
    Ok(call_ends
        .into_iter()
        .enumerate()
        .map(|(id, first)| {
            let last = (first + window).min(originals.len());
            let n = last - first;
            let delta = if n == 0 {
                0.0
            } else {
                let lookup_loss: f64 = originals[first..last].iter().map(|lp| -lp).sum::<f64>() / n as f64;
                let plain_loss: f64 = plain[first..last].iter().map(|t| -t.logprob).sum::<f64>() / n as f64;
                plain_loss - lookup_loss
            };
            DeltaLossRecord {
                triplet_id: id as u64,
                delta,
                window: n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffloadRanking {
    /// Facts to keep annotated (externalized to the database).
    pub keep: BTreeSet<u64>,
    /// Smallest kept delta; `None` when nothing is kept.
    pub threshold: Option<f64>,
}

/// Keep the `⌈keep_ratio · N⌉` records with the largest delta. Ties go to
/// the lower `triplet_id`.
pub fn rank_offload(records: &[DeltaLossRecord], keep_ratio: f64) -> Result<OffloadRanking, AccountingError> {
    check_fraction("keep ratio", keep_ratio, true)?;
    if let Some(r) = records.iter().find(|r| !r.delta.is_finite()) {
        return Err(AccountingError::InvalidArgument(format!(
            "non-finite delta for triplet {}",
            r.triplet_id
        )));
    }
    let mut order: Vec<&DeltaLossRecord> = records.iter().collect();
    order.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.triplet_id.cmp(&b.triplet_id)));
    let kept = &order[..top_count(keep_ratio, records.len())];
    Ok(OffloadRanking {
        keep: kept.iter().map(|r| r.triplet_id).collect(),
        threshold: kept.last().map(|r| r.delta),
    })
}

/// Drop the `⌈discard_fraction · N⌉` highest-loss calls (ties: the higher
/// id goes first) and return the remaining ids in input order.
pub fn corrector_filter(calls: &[(u64, f64)], discard_fraction: f64) -> Result<Vec<u64>, AccountingError> {
    check_fraction("discard fraction", discard_fraction, false)?;
    if calls.iter().any(|(_, l)| l.is_nan()) {
        return Err(AccountingError::InvalidArgument("NaN loss".into()));
    }
    let mut order: Vec<usize> = (0..calls.len()).collect();
    order.sort_by(|&a, &b| calls[b].1.total_cmp(&calls[a].1).then(calls[b].0.cmp(&calls[a].0)));
    let mut dropped = vec![false; calls.len()];
    for &i in &order[..top_count(discard_fraction, calls.len())] {
        dropped[i] = true;
    }
    Ok(calls
        .iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|((id, _), _)| *id)
        .collect())
}
