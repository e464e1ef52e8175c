//! Central-finite-difference checks for the analytic logit gradients.

use augloss_core::loss::{augloss_objective, loss_gradient, LossSpec, Posterior, PosteriorTuple};
use augloss_core::rng::seeded_rng;
use rand::Rng;

const H: f64 = 1e-5;

/// Objective evaluated from raw logits through the public forward path.
fn objective_at(spec: &LossSpec, logits: &[Vec<f64>], y: usize) -> f64 {
    let members: Vec<Posterior> = logits
        .iter()
        .map(|row| Posterior::from_logits(row).unwrap())
        .collect();
    let mut it = members.into_iter();
    let orig = it.next().unwrap();
    let tuple = PosteriorTuple::new(orig, it.collect()).unwrap();
    augloss_objective(&tuple, y, spec).unwrap()
}

/// Central finite differences of the objective with respect to each logit.
fn fd_gradient(spec: &LossSpec, logits: &[Vec<f64>], y: usize) -> Vec<Vec<f64>> {
    let mut grad = vec![vec![0.0; logits[0].len()]; logits.len()];
    for r in 0..logits.len() {
        for c in 0..logits[0].len() {
            let mut plus = logits.to_vec();
            plus[r][c] += H;
            let mut minus = logits.to_vec();
            minus[r][c] -= H;
            grad[r][c] = (objective_at(spec, &plus, y) - objective_at(spec, &minus, y)) / (2.0 * H);
        }
    }
    grad
}

fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rn) in analytic.iter().zip(numeric) {
        for (&a, &n) in ra.iter().zip(rn) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}

fn check_family(spec: LossSpec, draws: usize, seed: u64, tol: f64) {
    let mut rng = seeded_rng(seed);
    let k = 10;
    let n = 3;
    for _ in 0..draws {
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y = rng.random_range(0..k);
        let analytic = loss_gradient(&spec, &logits, y).unwrap();
        let numeric = fd_gradient(&spec, &logits, y);
        let err = max_relative_error(&analytic, &numeric);
        assert!(
            err < tol,
            "{} lambda={} max relative error {err}",
            spec.family.name(),
            spec.lambda
        );
    }
}

#[test]
fn ce_gradient_matches_finite_differences() {
    check_family(LossSpec::ce(0.0).unwrap(), 100, 100, 1e-4);
    check_family(LossSpec::ce(12.0).unwrap(), 100, 101, 1e-4);
}

#[test]
fn focal_gradient_matches_finite_differences() {
    check_family(LossSpec::focal(2.0, 0.0).unwrap(), 100, 200, 1e-4);
    check_family(LossSpec::focal(2.0, 12.0).unwrap(), 100, 201, 1e-4);
    check_family(LossSpec::focal(0.5, 12.0).unwrap(), 50, 202, 1e-4);
}

#[test]
fn nce_rce_gradient_matches_finite_differences() {
    check_family(LossSpec::nce_rce(1.0, 0.1, 4.0, 0.0).unwrap(), 100, 300, 1e-4);
    check_family(LossSpec::nce_rce(1.0, 0.1, 4.0, 12.0).unwrap(), 100, 301, 1e-4);
    check_family(LossSpec::nce_rce(10.0, 1.0, 4.0, 12.0).unwrap(), 50, 302, 1e-4);
}

#[test]
fn alpha_gradient_matches_finite_differences() {
    check_family(LossSpec::alpha(2.0, 0.0).unwrap(), 100, 400, 1e-4);
    check_family(LossSpec::alpha(2.0, 12.0).unwrap(), 100, 401, 1e-4);
    check_family(LossSpec::alpha(0.5, 12.0).unwrap(), 50, 402, 1e-4);
    check_family(LossSpec::alpha(3.0, 12.0).unwrap(), 50, 403, 1e-4);
}

/// Every family's minimizer over the simplex is the one-hot at the label:
/// plain gradient descent on the logits from random starts must drive
/// p[y] above 0.99.
#[test]
fn every_family_minimizer_is_one_hot() {
    let families = [
        LossSpec::ce(0.0).unwrap(),
        LossSpec::focal(2.0, 0.0).unwrap(),
        LossSpec::nce_rce(1.0, 0.1, 4.0, 0.0).unwrap(),
        LossSpec::alpha(2.0, 0.0).unwrap(),
    ];
    let k = 6;
    let mut rng = seeded_rng(777);
    for spec in families {
        for start in 0..20 {
            let mut logits = vec![(0..k)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()];
            let y = start % k;
            // focal's gradient vanishes like (1 - p)^gamma near the
            // optimum, so allow plenty of steps and exit early once past
            // the threshold
            for _ in 0..60_000 {
                let g = loss_gradient(&spec, &logits, y).unwrap();
                for (z, gz) in logits[0].iter_mut().zip(&g[0]) {
                    *z -= 0.5 * gz;
                }
                if Posterior::from_logits(&logits[0]).unwrap().get(y) > 0.995 {
                    break;
                }
            }
            let p = Posterior::from_logits(&logits[0]).unwrap();
            assert!(
                p.get(y) > 0.99,
                "{}: start {start} stalled at p[y] = {}",
                spec.family.name(),
                p.get(y)
            );
        }
    }
}
