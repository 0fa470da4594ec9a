//! Qualitative orderings expected across counterfactual cells.

use super::ExperimentReport;
use crate::beliefs::InfoRegime;
use crate::policies::PriorityPolicy;

/// A violated ordering, described in words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingViolation(pub String);

fn cell(
    reports: &[ExperimentReport],
    policy: PriorityPolicy,
    regime: InfoRegime,
) -> Option<&ExperimentReport> {
    reports
        .iter()
        .find(|r| r.policy == policy && r.regime == regime)
}

fn check(out: &mut Vec<OrderingViolation>, ok: bool, what: String) {
    if !ok {
        out.push(OrderingViolation(what));
    }
}

/// Regime orderings under one policy. `min_gap` is the least allocation-rate
/// advantage (as a fraction) of no social learning over social learning.
pub fn regime_violations(
    reports: &[ExperimentReport],
    policy: PriorityPolicy,
    min_gap: f64,
) -> Vec<OrderingViolation> {
    let mut out = Vec::new();
    let (Some(sl), Some(nosl), Some(is)) = (
        cell(reports, policy, InfoRegime::SocialLearning),
        cell(reports, policy, InfoRegime::NoSocialLearning),
        cell(reports, policy, InfoRegime::InformationSharing),
    ) else {
        return out;
    };
    check(
        &mut out,
        nosl.allocation_rate - sl.allocation_rate >= min_gap,
        format!(
            "{policy}: allocation rate no-social-learning {:.4} minus social-learning {:.4} below {min_gap}",
            nosl.allocation_rate, sl.allocation_rate
        ),
    );
    check(
        &mut out,
        is.mean_accepted_sequence < sl.mean_accepted_sequence
            && sl.mean_accepted_sequence < nosl.mean_accepted_sequence,
        format!(
            "{policy}: accepted sequence not info-sharing {:.3} < social-learning {:.3} < no-social-learning {:.3}",
            is.mean_accepted_sequence, sl.mean_accepted_sequence, nosl.mean_accepted_sequence
        ),
    );
    check(
        &mut out,
        is.mean_acceptance_utility >= sl.mean_acceptance_utility
            && sl.mean_acceptance_utility > nosl.mean_acceptance_utility,
        format!(
            "{policy}: acceptance utility not info-sharing {:.4} >= social-learning {:.4} > no-social-learning {:.4}",
            is.mean_acceptance_utility, sl.mean_acceptance_utility, nosl.mean_acceptance_utility
        ),
    );
    out
}

/// Policy orderings under one regime.
pub fn policy_violations(
    reports: &[ExperimentReport],
    regime: InfoRegime,
) -> Vec<OrderingViolation> {
    let mut out = Vec::new();
    let (Some(g), Some(o), Some(r)) = (
        cell(reports, PriorityPolicy::Greedy, regime),
        cell(reports, PriorityPolicy::Optn, regime),
        cell(reports, PriorityPolicy::ReverseGreedy, regime),
    ) else {
        return out;
    };
    check(
        &mut out,
        g.mean_acceptance_utility > o.mean_acceptance_utility
            && o.mean_acceptance_utility > r.mean_acceptance_utility,
        format!(
            "{regime}: acceptance utility not greedy {:.4} > optn {:.4} > reverse-greedy {:.4}",
            g.mean_acceptance_utility, o.mean_acceptance_utility, r.mean_acceptance_utility
        ),
    );
    check(
        &mut out,
        g.mean_accepted_sequence < o.mean_accepted_sequence
            && o.mean_accepted_sequence < r.mean_accepted_sequence,
        format!(
            "{regime}: accepted sequence not greedy {:.3} < optn {:.3} < reverse-greedy {:.3}",
            g.mean_accepted_sequence, o.mean_accepted_sequence, r.mean_accepted_sequence
        ),
    );
    check(
        &mut out,
        r.allocation_rate > o.allocation_rate && o.allocation_rate > g.allocation_rate,
        format!(
            "{regime}: allocation rate not reverse-greedy {:.4} > optn {:.4} > greedy {:.4}",
            r.allocation_rate, o.allocation_rate, g.allocation_rate
        ),
    );
    out
}

/// Regime orderings under OPTN and policy orderings under social learning,
/// over whichever of those cells are present.
pub fn grid_violations(reports: &[ExperimentReport]) -> Vec<OrderingViolation> {
    let mut v = regime_violations(reports, PriorityPolicy::Optn, 0.0);
    v.extend(policy_violations(reports, InfoRegime::SocialLearning));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(
        policy: PriorityPolicy,
        regime: InfoRegime,
        alloc: f64,
        seq: f64,
        util: f64,
    ) -> ExperimentReport {
        ExperimentReport {
            policy,
            regime,
            replications: 1,
            seed: 0,
            runs: 100,
            acceptances: 50,
            allocation_rate: alloc,
            mean_accepted_sequence: seq,
            mean_acceptance_utility: util,
            total_acceptance_utility: 0.0,
            accept_rate_high_quality: 0.0,
            reject_rate_low_quality: 0.0,
            high_quality_share: 0.0,
            accepted_las: 0.0,
            accepted_waiting_time: 0.0,
            accepted_blood_match: 0.0,
            accepted_distance: 0.0,
            shrunk_runs: 0,
        }
    }

    #[test]
    fn expected_grid_passes() {
        use InfoRegime::*;
        use PriorityPolicy::*;
        let grid = vec![
            report(Optn, SocialLearning, 0.47, 6.9, 2.52),
            report(Optn, NoSocialLearning, 0.84, 7.3, 1.83),
            report(Optn, InformationSharing, 0.58, 2.5, 2.71),
            report(Greedy, SocialLearning, 0.44, 4.0, 2.75),
            report(ReverseGreedy, SocialLearning, 0.52, 12.0, 1.48),
        ];
        assert!(grid_violations(&grid).is_empty());
        assert!(regime_violations(&grid, Optn, 0.15).is_empty());
        assert_eq!(regime_violations(&grid, Optn, 0.40).len(), 1);
    }

    #[test]
    fn swapped_policy_is_reported() {
        use InfoRegime::*;
        use PriorityPolicy::*;
        let grid = vec![
            report(Optn, SocialLearning, 0.47, 6.9, 2.52),
            report(Greedy, SocialLearning, 0.50, 4.0, 2.75),
            report(ReverseGreedy, SocialLearning, 0.52, 12.0, 1.48),
        ];
        let v = policy_violations(&grid, SocialLearning);
        assert_eq!(v.len(), 1);
        assert!(v[0].0.contains("allocation rate"));
    }

    #[test]
    fn missing_cells_are_skipped() {
        let grid = vec![report(
            PriorityPolicy::Optn,
            InfoRegime::SocialLearning,
            0.5,
            3.0,
            2.0,
        )];
        assert!(grid_violations(&grid).is_empty());
    }
}
