//! Conditional acceptance probability by sequence number.

use std::collections::BTreeMap;

use super::MatchRunOutcome;

/// Positions beyond this carry negligible conditional acceptance mass.
pub const CUMULATIVE_HORIZON: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub sequence_number: u32,
    /// Runs that reached this position with a provisional-yes patient there.
    pub reached: u64,
    pub accepted: u64,
    pub probability: f64,
}

/// Acceptances at `k` divided by runs reaching `k` with a provisional yes.
/// Positions never reached are omitted.
pub fn conditional_accept_curve(outcomes: &[MatchRunOutcome]) -> Vec<CurvePoint> {
    let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for o in outcomes {
        let stop = o.accepted_sequence().unwrap_or(u32::MAX);
        for r in &o.records {
            if r.sequence_number > stop {
                break;
            }
            if r.provisional {
                let c = counts.entry(r.sequence_number).or_default();
                c.0 += 1;
                if r.sequence_number == stop {
                    c.1 += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(k, (reached, accepted))| CurvePoint {
            sequence_number: k,
            reached,
            accepted,
            probability: accepted as f64 / reached as f64,
        })
        .collect()
}

/// Probability of acceptance by position `n`: the sum over `k <= n` of
/// `x_k * prod_{i<k} (1 - x_i)`, truncated at position 50. Positions absent
/// from the curve contribute zero.
pub fn cumulative_accept_prob(curve: &[(u32, f64)], n: u32) -> f64 {
    let horizon = n.min(CUMULATIVE_HORIZON);
    let lookup: BTreeMap<u32, f64> = curve.iter().copied().collect();
    let mut survive = 1.0;
    let mut total = 0.0;
    for k in 1..=horizon {
        let x = lookup.get(&k).copied().unwrap_or(0.0);
        total += survive * x;
        survive *= 1.0 - x;
    }
    total
}

pub fn curve_pairs(curve: &[CurvePoint]) -> Vec<(u32, f64)> {
    curve
        .iter()
        .map(|c| (c.sequence_number, c.probability))
        .collect()
}

/// Two-column plotting CSV.
pub fn write_curve_csv<W: std::io::Write>(out: W, curve: &[CurvePoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Sequence Number", "Conditional Acceptance Probability"])?;
    for c in curve {
        w.write_record([
            c.sequence_number.to_string(),
            format!("{:.6}", c.probability),
        ])?;
    }
    w.flush()?;
    Ok(())
}
