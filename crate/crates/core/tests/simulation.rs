use seqalloc_core::beliefs::InfoRegime;
use seqalloc_core::data_io::{generate_population, GeneratorConfig};
use seqalloc_core::model::ModelParams;
use seqalloc_core::policies::PriorityPolicy;
use seqalloc_core::simulator::{
    conditional_accept_curve, curve_pairs, run_experiment, simulate_outcomes, write_reports_csv,
    FinalDecision, Population,
};

fn population(seed: u64, donors: usize) -> Population {
    let cfg = GeneratorConfig {
        n_donors: donors,
        seed,
        ..Default::default()
    };
    let b = generate_population(&cfg).unwrap();
    Population::new(b.donors, b.patients)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let pop = population(4, 120);
    let params = ModelParams::reference();
    for regime in InfoRegime::ALL {
        let one = in_pool(1, || {
            run_experiment(&pop, &params, PriorityPolicy::Greedy, regime, 3, 8).unwrap()
        });
        let four = in_pool(4, || {
            run_experiment(&pop, &params, PriorityPolicy::Greedy, regime, 3, 8).unwrap()
        });
        assert_eq!(one, four);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_reports_csv(&mut a, &[one]).unwrap();
        write_reports_csv(&mut b, &[four]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn every_run_ends_in_acceptance_or_full_rejection() {
    let pop = population(6, 150);
    let params = ModelParams::reference();
    for policy in PriorityPolicy::ALL {
        for regime in InfoRegime::ALL {
            let batch = simulate_outcomes(&pop, &params, policy, regime, 4, 2).unwrap();
            let accepted = batch.outcomes.iter().filter(|o| o.accepted()).count();
            let rejected = batch
                .outcomes
                .iter()
                .filter(|o| {
                    !o.accepted()
                        && o.records
                            .iter()
                            .all(|r| r.provisional == (r.decision == Some(FinalDecision::Reject)))
                })
                .count();
            assert_eq!(accepted + rejected, 150 * 4);
            let rep = run_experiment(&pop, &params, policy, regime, 4, 2).unwrap();
            assert_eq!(rep.acceptances, accepted);
            assert_eq!(rep.runs, 600);
        }
    }
}

#[test]
fn social_learning_curve_declines_over_first_five_positions() {
    let pop = population(21, 548);
    let batch = simulate_outcomes(
        &pop,
        &ModelParams::reference(),
        PriorityPolicy::Optn,
        InfoRegime::SocialLearning,
        19,
        21,
    )
    .unwrap();
    assert!(batch.outcomes.len() >= 10_000);
    let pairs = curve_pairs(&conditional_accept_curve(&batch.outcomes));
    let head: Vec<f64> = (1..=5u32)
        .map(|k| pairs.iter().find(|(s, _)| *s == k).map(|p| p.1).unwrap())
        .collect();
    let rises: Vec<f64> = head
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .collect();
    assert!(rises.len() <= 1, "{head:?}");
    assert!(rises.iter().all(|d| *d < 0.01), "{head:?}");
}

#[test]
fn generated_allocation_rate_is_near_half() {
    let pop = population(13, 548);
    let rep = run_experiment(
        &pop,
        &ModelParams::reference(),
        PriorityPolicy::Optn,
        InfoRegime::SocialLearning,
        5,
        13,
    )
    .unwrap();
    assert!(
        (0.40..=0.60).contains(&rep.allocation_rate),
        "{}",
        rep.allocation_rate
    );
}
