use super::*;
use crate::tensor::{ParamId, Tensor};

/// `a * (theta - c)^2` on a single scalar parameter.
#[derive(Debug, Clone, Copy)]
struct Quad {
    a: f64,
    c: f64,
}

struct Surrogate;

impl Objective for Surrogate {
    type Batch = Quad;

    fn loss_grad(&self, params: &ParamSet, q: &Quad) -> Result<(f64, Gradients)> {
        let th = params.get(ParamId(0)).data()[0];
        let mut g = Gradients::new();
        g.insert(ParamId(0), Tensor::scalar(2.0 * q.a * (th - q.c)));
        Ok((q.a * (th - q.c).powi(2), g))
    }
}

fn theta(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("theta", Tensor::scalar(v)).unwrap();
    p
}

fn value(p: &ParamSet) -> f64 {
    p.get(ParamId(0)).data()[0]
}

fn task(c: f64) -> MetaTask<Quad> {
    let q = Quad { a: 1.0, c };
    MetaTask {
        clean_support: q,
        adv_support: q,
        clean_query: q,
        adv_query: q,
    }
}

fn cfg(improved: bool, alpha: f64) -> MetaConfig {
    MetaConfig {
        alpha1: alpha,
        alpha2: alpha,
        beta1: 0.001,
        beta2: 0.001,
        k: 1,
        improved,
        pairing: Pairing::Cross,
        adversarial: true,
    }
}

/// Adam's first step from zero moments.
fn first_adam(th: f64, g: f64, lr: f64) -> f64 {
    th - lr * g / (g.abs() + 1e-8)
}

#[test]
fn defaults_follow_configuration_contract() {
    let c = TrainConfig::default();
    assert_eq!((c.alpha1, c.alpha2, c.beta1, c.beta2), (0.001, 0.001, 0.001, 0.001));
    assert_eq!((c.num_task, c.support_size, c.query_size, c.k), (4, 3, 4, 1));
    assert_eq!(c.mode, Mode::Plain);
    assert_eq!(c.pairing, Pairing::Cross);
    c.validate().unwrap();
}

#[test]
fn invalid_config_names_the_field() {
    let c = TrainConfig {
        beta2: -1.0,
        ..TrainConfig::default()
    };
    assert!(c.validate().unwrap_err().to_string().contains("beta2"));
    let c = TrainConfig {
        num_task: 0,
        ..TrainConfig::default()
    };
    assert!(c.validate().unwrap_err().to_string().contains("num_task"));
}

#[test]
fn inner_adapt_one_step_on_square() {
    let p = theta(1.0);
    let out = inner_adapt(&Surrogate, &p, &Quad { a: 1.0, c: 0.0 }, 0.1, 1).unwrap();
    assert!((value(&out) - 0.8).abs() < 1e-14);
    assert_eq!(value(&p), 1.0);
}

#[test]
fn two_steps_equal_two_single_steps() {
    let q = Quad { a: 0.7, c: 0.3 };
    let p = theta(-1.3);
    let two = inner_adapt(&Surrogate, &p, &q, 0.05, 2).unwrap();
    let once = inner_adapt(&Surrogate, &p, &q, 0.05, 1).unwrap();
    let twice = inner_adapt(&Surrogate, &once, &q, 0.05, 1).unwrap();
    assert_eq!(two, twice);
}

#[test]
fn zero_loss_is_a_fixed_point() {
    let p = theta(2.0);
    let out = inner_adapt(&Surrogate, &p, &Quad { a: 0.0, c: 5.0 }, 0.5, 3).unwrap();
    assert_eq!(out, p);

    let mut m = theta(2.0);
    let flat = MetaTask {
        clean_support: Quad { a: 0.0, c: 0.0 },
        adv_support: Quad { a: 0.0, c: 0.0 },
        clean_query: Quad { a: 0.0, c: 0.0 },
        adv_query: Quad { a: 0.0, c: 0.0 },
    };
    let mut opt = MetaOptState::new();
    meta_step(&Surrogate, &mut m, &[flat.clone(), flat], &cfg(false, 0.1), &mut opt).unwrap();
    assert_eq!(value(&m), 2.0);
    assert_eq!(opt.first.step, 1);
}

#[test]
fn empty_task_list_is_usage_error() {
    let mut p = theta(0.0);
    let err = meta_step::<Surrogate>(&Surrogate, &mut p, &[], &cfg(false, 0.1), &mut MetaOptState::new());
    assert!(matches!(err, Err(Error::Usage(_))));
}

#[test]
fn adml_and_improved_diverge_after_one_batch() {
    let tasks = [task(0.0), task(1.5)];
    let alpha = 0.4;

    // Hand trace, shared base.
    let adapt = |th: f64, c: f64| th - alpha * 2.0 * (th - c);
    let g_plain: f64 = [0.0, 1.5].iter().map(|&c| 2.0 * (adapt(1.0, c) - c)).sum();
    let expect_plain = first_adam(first_adam(1.0, g_plain, 0.001), g_plain, 0.001);

    // Hand trace, carried base: clean and adversarial displacements both applied.
    let mut base = 1.0;
    let mut g_carry = 0.0;
    for c in [0.0, 1.5] {
        let a = adapt(base, c);
        g_carry += 2.0 * (a - c);
        base = a + a - base;
    }
    let expect_carry = first_adam(first_adam(1.0, g_carry, 0.001), g_carry, 0.001);

    let mut p = theta(1.0);
    meta_step(&Surrogate, &mut p, &tasks, &cfg(false, alpha), &mut MetaOptState::new()).unwrap();
    let mut q = theta(1.0);
    meta_step(&Surrogate, &mut q, &tasks, &cfg(true, alpha), &mut MetaOptState::new()).unwrap();

    assert!((value(&p) - expect_plain).abs() < 1e-12);
    assert!((value(&q) - expect_carry).abs() < 1e-12);
    assert!((value(&p) - value(&q)).abs() > 1e-3);
}

#[test]
fn adml_ignores_task_order_improved_does_not() {
    let tasks = [task(0.0), task(1.5), task(-0.4), task(0.9)];
    let reversed: Vec<_> = tasks.iter().rev().cloned().collect();
    let run = |t: &[MetaTask<Quad>], improved: bool| {
        let mut p = theta(0.3);
        let mut opt = MetaOptState::new();
        for _ in 0..3 {
            meta_step(&Surrogate, &mut p, t, &cfg(improved, 0.3), &mut opt).unwrap();
        }
        value(&p)
    };
    assert!((run(&tasks, false) - run(&reversed, false)).abs() <= 1e-12);
    assert!((run(&tasks, true) - run(&reversed, true)).abs() > 1e-9);
}

#[test]
fn single_clean_task_is_first_order_maml() {
    let t = MetaTask {
        clean_support: Quad { a: 1.0, c: 2.0 },
        adv_support: Quad { a: 3.0, c: -7.0 },
        clean_query: Quad { a: 0.5, c: 1.0 },
        adv_query: Quad { a: 9.0, c: 4.0 },
    };
    let mut c = cfg(false, 0.1);
    c.adversarial = false;
    let mut p = theta(0.0);
    meta_step(&Surrogate, &mut p, &[t], &c, &mut MetaOptState::new()).unwrap();

    let adapted = 0.0 - 0.1 * 2.0 * (0.0 - 2.0);
    let g = 2.0 * 0.5 * (adapted - 1.0);
    assert!((value(&p) - first_adam(0.0, g, 0.001)).abs() < 1e-14);
}

#[test]
fn pairings_score_different_queries() {
    let t = MetaTask {
        clean_support: Quad { a: 1.0, c: 1.0 },
        adv_support: Quad { a: 1.0, c: -1.0 },
        clean_query: Quad { a: 1.0, c: 1.0 },
        adv_query: Quad { a: 1.0, c: -1.0 },
    };
    let mut cross = theta(0.0);
    meta_step(&Surrogate, &mut cross, &[t.clone()], &cfg(false, 0.25), &mut MetaOptState::new())
        .unwrap();
    let mut straight = theta(0.0);
    let mut c = cfg(false, 0.25);
    c.pairing = Pairing::Straight;
    meta_step(&Surrogate, &mut straight, &[t], &c, &mut MetaOptState::new()).unwrap();

    // Clean-adapted 0.5 scored against -1 pulls down; adversarial-adapted -0.5 against 1 pulls up.
    let cross_expect = first_adam(first_adam(0.0, 3.0, 0.001), -3.0, 0.001);
    // Straight: 0.5 vs 1 and -0.5 vs -1 both pull towards their own targets.
    let straight_expect = first_adam(first_adam(0.0, -1.0, 0.001), 1.0, 0.001);
    assert!((value(&cross) - cross_expect).abs() < 1e-14);
    assert!((value(&straight) - straight_expect).abs() < 1e-14);
}
