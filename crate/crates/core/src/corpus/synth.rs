use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::macu::ConfusionSet;

use super::Example;

/// Corrupt clean sentences: every character with at least one confusion
/// partner is independently swapped, with probability `rate`, for a partner
/// drawn uniformly. Targets are the clean sentences.
pub fn synthesize_errors<S: AsRef<str>>(
    sentences: &[S],
    confusion: &ConfusionSet,
    rate: f64,
    seed: u64,
) -> Result<Vec<Example>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("error rate {rate} outside [0, 1]")));
    }
    let partners = confusion.partner_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let target: Vec<char> = s.as_ref().chars().collect();
        if target.is_empty() {
            continue;
        }
        let mut source = target.clone();
        for c in source.iter_mut() {
            if let Some(ps) = partners.get(c) {
                if rng.gen_bool(rate) {
                    *c = ps[rng.gen_range(0..ps.len())];
                }
            }
        }
        out.push(Example {
            id: format!("synth:{i}"),
            source,
            target,
        });
    }
    Ok(out)
}
