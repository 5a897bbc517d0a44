mod common;

use approx::assert_abs_diff_eq;
use diffcore::corpus::WeightedExample;
use diffcore::denoiser::{Denoiser, OracleDenoiser, Prediction, TabularDenoiser};
use diffcore::diffusion::{
    finite_difference_gradient, forward_sample, loss_and_gradient, sample_loss, total_loss, vlb_loss, Condition, DenoiserOutput,
    MonteCarlo, TokenSequence, VlbOptions, DEFAULT_LAMBDA,
};
use diffcore::{seeded_rng, Error, MatrixKind};
use rand::Rng;

use common::{kl, DenseChain};

/// Always predicts one fixed clean sequence.
struct Knows(TokenSequence, usize);

impl Denoiser for Knows {
    fn predict(&self, _: &TokenSequence, _: usize, _: Condition) -> diffcore::Result<Prediction> {
        Ok(Prediction::Factorized(DenoiserOutput::one_hot(&self.0, self.1)?))
    }
}

struct Uniform(usize);

impl Denoiser for Uniform {
    fn predict(&self, x_t: &TokenSequence, _: usize, _: Condition) -> diffcore::Result<Prediction> {
        Ok(Prediction::Factorized(DenoiserOutput::uniform(x_t.len(), self.0)))
    }
}

#[test]
fn perfect_denoiser_leaves_only_prior() {
    for kind in MatrixKind::ALL {
        let model = common::model(kind, 3, 6);
        let x0 = TokenSequence(vec![2, 0, 1]);
        let report = vlb_loss(&model, &Knows(x0.clone(), 3), &x0, Condition(0), VlbOptions::default()).unwrap();
        assert!(report.exact);
        assert_eq!(report.step_terms.len(), 5);
        for term in &report.step_terms {
            assert!(term.abs() <= 1e-12, "{kind}: {term}");
        }
        assert!(report.prior <= 1e-6);
        assert_abs_diff_eq!(report.total, report.prior, epsilon = 1e-12);
    }
}

#[test]
fn saturated_prior_term_is_negligible() {
    for kind in MatrixKind::ALL {
        for k in [2, 5, 8] {
            let model = common::model(kind, k, 12);
            let x0 = TokenSequence(vec![k - 1]);
            let report = vlb_loss(&model, &Uniform(k), &x0, Condition(0), VlbOptions::default()).unwrap();
            assert!(report.prior <= 1e-6);
        }
    }
}

#[test]
fn uniform_denoiser_matches_full_chain_enumeration() {
    for kind in MatrixKind::ALL {
        let model = common::model(kind, 3, 3);
        let chain = DenseChain::new(model.schedule());
        let n = model.num_categories();
        let uniform = vec![1.0 / 3.0; 3];
        for x0 in 0..3 {
            let mut expected = 0.0;
            for x1 in 0..n {
                for x2 in 0..n {
                    for x3 in 0..n {
                        let w = chain.steps[1][(x1, x0)] * chain.steps[2][(x2, x1)] * chain.steps[3][(x3, x2)];
                        if w == 0.0 {
                            continue;
                        }
                        let mut chain_loss = 0.0;
                        for (t, x_t) in [(1, x1), (2, x2)] {
                            let q = chain.posterior(x_t, x0, t, t - 1).unwrap();
                            chain_loss += kl(&q, &chain.reverse(&uniform, x_t, t, t - 1));
                        }
                        expected += w * chain_loss;
                    }
                }
            }
            let q_t: Vec<f64> = chain.cumulative[3].column(x0).iter().copied().collect();
            let other: Vec<f64> = chain.cumulative[3].column((x0 + 1) % 3).iter().copied().collect();
            expected += kl(&q_t, &other);

            let got = vlb_loss(&model, &Uniform(3), &TokenSequence(vec![x0]), Condition(0), VlbOptions::default())
                .unwrap();
            assert_abs_diff_eq!(got.total, expected, epsilon = 1e-10);
        }
    }
}

#[test]
fn enumeration_cap_requires_monte_carlo_opt_in() {
    let model = common::model(MatrixKind::MaskUniform, 4, 4);
    let x0 = TokenSequence(vec![0; 6]);
    let err = vlb_loss(&model, &Uniform(4), &x0, Condition(0), VlbOptions::default()).unwrap_err();
    assert!(matches!(err, Error::EnumerationCap { required: 15625, cap: 4096 }));

    let mc = VlbOptions { monte_carlo: Some(MonteCarlo::default()), ..VlbOptions::default() };
    let a = vlb_loss(&model, &Uniform(4), &x0, Condition(0), mc).unwrap();
    let b = vlb_loss(&model, &Uniform(4), &x0, Condition(0), mc).unwrap();
    assert!(!a.exact);
    assert_eq!(a, b);
    assert!(a.total > 0.0);
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let model = common::model(MatrixKind::Uniform, 3, 5);
    let x0 = TokenSequence(vec![1, 2]);
    let exact = vlb_loss(&model, &Uniform(3), &x0, Condition(0), VlbOptions::default()).unwrap();
    let mc = VlbOptions {
        enumeration_cap: 1,
        monte_carlo: Some(MonteCarlo { samples: 20_000, seed: 3 }),
    };
    let approx = vlb_loss(&model, &Uniform(3), &x0, Condition(0), mc).unwrap();
    assert!((exact.total - approx.total).abs() < 0.02 * exact.total, "{} vs {}", exact.total, approx.total);
}

#[test]
fn vlb_is_nonnegative_for_oracle_marginals() {
    let model = common::model(MatrixKind::Mask, 4, 6);
    let data = vec![
        WeightedExample { condition: Condition(0), tokens: TokenSequence(vec![0, 1]), weight: 0.5 },
        WeightedExample { condition: Condition(0), tokens: TokenSequence(vec![3, 2]), weight: 0.5 },
    ];
    let oracle = OracleDenoiser::new(model.clone(), data).unwrap();
    let report =
        vlb_loss(&model, &oracle, &TokenSequence(vec![0, 1]), Condition(0), VlbOptions::default()).unwrap();
    assert!(report.total >= -1e-9);
}

#[test]
fn oracle_posterior_matches_hand_enumeration() {
    let model = common::model(MatrixKind::MaskUniform, 4, 10);
    let chain = DenseChain::new(model.schedule());
    let seqs = [vec![0, 1], vec![2, 2], vec![3, 0]];
    let weights = [0.2, 0.5, 0.3];
    let data = seqs
        .iter()
        .zip(weights)
        .map(|(s, w)| WeightedExample { condition: Condition(0), tokens: TokenSequence(s.clone()), weight: w })
        .collect();
    let oracle = OracleDenoiser::new(model.clone(), data).unwrap();
    let t = 5;
    for a in 0..5 {
        for b in 0..5 {
            let x_t = TokenSequence(vec![a, b]);
            let raw: Vec<f64> = seqs
                .iter()
                .zip(weights)
                .map(|(s, w)| w * chain.cumulative[t][(a, s[0])] * chain.cumulative[t][(b, s[1])])
                .collect();
            let total: f64 = raw.iter().sum();
            let post = oracle.oracle_predict(&x_t, t, Condition(0)).unwrap();
            for (i, r) in raw.iter().enumerate() {
                assert_abs_diff_eq!(post.probs.get(i), r / total, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn total_loss_identity_on_random_inputs() {
    let mut rng = seeded_rng(21);
    for _ in 0..1000 {
        let vlb = rng.random_range(0.0..10.0);
        let aux = rng.random_range(0.0..10.0);
        let r = total_loss(vlb, aux, DEFAULT_LAMBDA);
        assert!((r.total - (vlb + 1e-4 * aux)).abs() <= 1e-12);
        assert_eq!(r.total, DEFAULT_LAMBDA * aux + vlb);
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 { (a - b).abs() } else { (a - b).abs() / scale }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-4;
    let mut rng = seeded_rng(22);
    for kind in MatrixKind::ALL {
        for lambda in [DEFAULT_LAMBDA, 0.5] {
            for _ in 0..20 {
                let model = common::model(kind, 3, 3);
                let mut den = TabularDenoiser::new(1, 3, model.num_categories(), 3, 0.1).unwrap();
                den.logits_mut().data.iter_mut().for_each(|l| *l = rng.random_range(-2.0..2.0));
                let x0 = TokenSequence(vec![rng.random_range(0..3)]);
                let t = rng.random_range(1..=3);
                let x_t = forward_sample(&model, &x0, t, &mut rng).unwrap();
                let (_, grad) = loss_and_gradient(&model, &den, &x0, &x_t, t, Condition(0), lambda).unwrap();
                let offset = den.logits().row_offset(0, t, x_t.0[0]);
                for j in 0..3 {
                    let idx = offset + j;
                    let mut plus = den.clone();
                    plus.logits_mut().data[idx] += h;
                    let mut minus = den.clone();
                    minus.logits_mut().data[idx] -= h;
                    let lp = sample_loss(&model, &plus, &x0, &x_t, t, Condition(0), lambda).unwrap().total;
                    let lm = sample_loss(&model, &minus, &x0, &x_t, t, Condition(0), lambda).unwrap().total;
                    let numeric = (lp - lm) / (2.0 * h);
                    let err = relative_error(grad.data[idx], numeric);
                    assert!(err < 1e-3, "{kind} t={t}: analytic {} numeric {numeric}", grad.data[idx]);
                }
                // Rows not addressed by x_t receive no gradient.
                let touched: f64 = grad.data.iter().map(|g| g.abs()).sum::<f64>()
                    - grad.data[offset..offset + 3].iter().map(|g| g.abs()).sum::<f64>();
                assert_eq!(touched, 0.0);
            }
        }
    }
}

#[test]
fn library_finite_difference_agrees_with_analytic() {
    let mut rng = seeded_rng(44);
    for kind in MatrixKind::ALL {
        let model = common::model(kind, 3, 6);
        let mut den = TabularDenoiser::new(2, 6, model.num_categories(), 3, 0.1).unwrap();
        den.logits_mut().data.iter_mut().for_each(|l| *l = rng.random_range(-2.0..2.0));
        for _ in 0..20 {
            let x0 = TokenSequence((0..3).map(|_| rng.random_range(0..3)).collect());
            let t = rng.random_range(1..=6);
            let x_t = forward_sample(&model, &x0, t, &mut rng).unwrap();
            let (_, analytic) = loss_and_gradient(&model, &den, &x0, &x_t, t, Condition(1), 0.3).unwrap();
            let numeric = finite_difference_gradient(&model, &den, &x0, &x_t, t, Condition(1), 0.3, 1e-5).unwrap();
            for (a, n) in analytic.data.iter().zip(&numeric.data) {
                assert!((a - n).abs() <= 1e-6 * a.abs().max(1.0), "{kind}: {a} vs {n}");
            }
        }
    }
    let den = TabularDenoiser::new(1, 6, 4, 3, 0.1).unwrap();
    let model = common::model(MatrixKind::Mask, 3, 6);
    let x = TokenSequence(vec![3]);
    assert!(finite_difference_gradient(&model, &den, &TokenSequence(vec![0]), &x, 2, Condition(0), 0.1, 0.0).is_err());
    assert!(finite_difference_gradient(&model, &den, &TokenSequence(vec![0]), &x, 0, Condition(0), 0.1, 1e-4).is_err());
}
