#![allow(dead_code)]

use irrigation_core::mlp::{loss_and_gradients, NetworkWeights, Sample, CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so parameters with vanishing
/// gradients compare by absolute difference.
pub const FD_FLOOR: f64 = 1e-6;

pub fn random_batch(rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let n = rng.random_range(1..=16);
    (0..n)
        .map(|_| {
            let input = [rng.random(), rng.random(), rng.random()];
            Sample {
                raw: input,
                input,
                label: CLASSES[rng.random_range(0..3)],
            }
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients
/// for one seeded draw of weights and batch.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = NetworkWeights::zeros();
    for p in weights.params_mut() {
        *p = rng.random_range(-2.0..2.0);
    }
    let batch = random_batch(&mut rng);
    let (_, grad) = loss_and_gradients(&weights, &batch).unwrap();
    let analytic: Vec<f64> = grad.params().copied().collect();

    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let loss_at = |delta: f64| {
            let mut w = weights.clone();
            *w.params_mut().nth(i).unwrap() += delta;
            loss_and_gradients(&w, &batch).unwrap().0
        };
        let numeric = (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

const VALID_LINES: &[&str] = &[
    r#"{"type":"reading","v":1,"t_c":20.0,"h_pct":30.0,"m_pct":5.0,"ts_ms":1700000000000}"#,
    r#"{"type":"override","duty":"full","source":"dashboard"}"#,
    r#"{"type":"mode","mode":"manual:half"}"#,
    r#"{"type":"error","code":"rejected","message":"no"}"#,
    r#"{"type":"event","seq":3,"at_ms":10,"event":"pump_state_changed","on":true}"#,
];

const TOKENS: &[&str] = &[
    "{",
    "}",
    "[",
    "]",
    ",",
    ":",
    "\"type\"",
    "\"reading\"",
    "\"override\"",
    "\"v\"",
    "1",
    "2",
    "-1e400",
    "null",
    "true",
    "\"duty\"",
    "\"full\"",
    "\"t_c\"",
    "NaN",
    "\u{0}",
    "\\",
    "\"",
    "18446744073709551616",
    "\"\\ud800\"",
];

/// Deterministic mix of random bytes, mutated valid frames and token soup.
pub fn fuzz_line(rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.random_range(0..4) {
        0 => {
            let n = rng.random_range(0..64);
            (0..n).map(|_| rng.random()).collect()
        }
        1 => {
            let mut line = VALID_LINES[rng.random_range(0..VALID_LINES.len())]
                .as_bytes()
                .to_vec();
            for _ in 0..rng.random_range(1..4) {
                if line.is_empty() {
                    break;
                }
                let i = rng.random_range(0..line.len());
                match rng.random_range(0..3) {
                    0 => line[i] = rng.random(),
                    1 => {
                        line.remove(i);
                    }
                    _ => line.truncate(i),
                }
            }
            line
        }
        2 => {
            let n = rng.random_range(0..24);
            (0..n)
                .flat_map(|_| TOKENS[rng.random_range(0..TOKENS.len())].bytes())
                .collect()
        }
        _ => VALID_LINES[rng.random_range(0..VALID_LINES.len())]
            .as_bytes()
            .to_vec(),
    }
}
