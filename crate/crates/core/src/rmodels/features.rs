//! Joint (context, suggestion) feature vectors.

use serde::{Deserialize, Serialize};

use crate::clicksim::{Context, Suggestion};
use crate::error::{Error, Result};
use crate::rng::fnv1a;
use crate::text::detect_language;

/// Layout: `[hashed unigrams | word count / 12 | language match | context block]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub ctx_dim: usize,
}

impl Featurizer {
    pub fn new(dim: usize, ctx_dim: usize) -> Result<Self> {
        if dim < ctx_dim + 3 {
            return Err(Error::config(format!("feature dim {dim} leaves no room for hashed unigrams")));
        }
        Ok(Self { dim, ctx_dim })
    }

    pub fn hash_dims(&self) -> usize {
        self.dim - 2 - self.ctx_dim
    }

    pub fn word_count_index(&self) -> usize {
        self.hash_dims()
    }

    pub fn lang_match_index(&self) -> usize {
        self.hash_dims() + 1
    }

    pub fn context_block<'a>(&self, f: &'a [f64]) -> &'a [f64] {
        &f[self.dim - self.ctx_dim..]
    }

    pub fn featurize_text(&self, ctx: &Context, text: &str) -> Result<Vec<f64>> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.is_empty() {
            return Err(Error::invalid("cannot featurize an empty suggestion"));
        }
        if ctx.features.len() != self.ctx_dim {
            return Err(Error::invalid(format!(
                "context has {} features, featurizer expects {}",
                ctx.features.len(),
                self.ctx_dim
            )));
        }
        let hd = self.hash_dims() as u64;
        let mut f = vec![0.0; self.dim];
        for t in &toks {
            f[(fnv1a(t.as_bytes()) % hd) as usize] += 0.5;
        }
        f[self.word_count_index()] = toks.len() as f64 / 12.0;
        f[self.lang_match_index()] = match detect_language(text).matches(ctx.language) {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => 0.5,
        };
        f[self.dim - self.ctx_dim..].copy_from_slice(&ctx.features);
        Ok(f)
    }

    pub fn featurize(&self, ctx: &Context, s: &Suggestion) -> Result<Vec<f64>> {
        self.featurize_text(ctx, &s.text)
    }
}

/// Features of one preference triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFeatures {
    pub ctx: Vec<f64>,
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

pub fn featurize_triplets(fz: &Featurizer, triplets: &[crate::clicksim::PreferenceTriplet]) -> Result<Vec<TripletFeatures>> {
    triplets
        .iter()
        .map(|t| {
            Ok(TripletFeatures {
                ctx: t.context.features.clone(),
                chosen: fz.featurize(&t.context, &t.chosen)?,
                rejected: fz.featurize(&t.context, &t.rejected)?,
            })
        })
        .collect()
}
