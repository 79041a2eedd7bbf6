//! Embedding index over an offline dataset: exact Euclidean shortlisting
//! followed by geodesic re-ranking.
//!
//! Every transition (s_i, a_i) is embedded once as E(μ_q(s_i), a_i) using the
//! encoder mean, giving a deterministic row-major matrix. A query runs a full
//! Euclidean scan to collect the M closest rows, estimates a geodesic to each,
//! and returns the K smallest geodesic distances. Shortlist size M trades
//! query cost against fidelity; M = n is exhaustive geodesic search.

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorStore;
use crate::error::{Error, Result};
use crate::dataset::Dataset;
use crate::geometry::{curve_length, estimate_geodesic, GeodesicConfig, MetricField, SplineCurve};
use crate::latent::LatentModelBundle;

pub const DEFAULT_SHORTLIST: usize = 100;

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    embeddings: Vec<f64>,
    n: usize,
    d_e: usize,
    shortlist_size: usize,
    model_fingerprint: u64,
}

/// One query result: dataset row, geodesic distance, and whether the
/// straight-line fallback replaced a failed geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborHit {
    pub id: usize,
    pub distance: f64,
    pub fallback: bool,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    n: usize,
    d_e: usize,
    shortlist_size: usize,
    model_fingerprint: u64,
}

impl EmbeddingIndex {
    /// Embeds every dataset transition with the frozen bundle.
    pub fn build(bundle: &LatentModelBundle, dataset: &Dataset) -> Result<Self> {
        if dataset.d_s != bundle.config.d_s {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingIndex::build state dimension",
                expected: bundle.config.d_s,
                actual: dataset.d_s,
            });
        }
        if dataset.d_a != bundle.config.d_a {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingIndex::build action dimension",
                expected: bundle.config.d_a,
                actual: dataset.d_a,
            });
        }
        if dataset.is_empty() {
            return Err(Error::invalid("cannot index an empty dataset"));
        }
        let d_e = bundle.d_e();
        let mut embeddings = Vec::with_capacity(dataset.len() * d_e);
        for tr in &dataset.transitions {
            let post = bundle.embed_state(&tr.state)?;
            let e = bundle.embed_state_action(&post.mu, &tr.action)?;
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("dataset embedding"));
            }
            embeddings.extend_from_slice(&e);
        }
        Ok(EmbeddingIndex {
            embeddings,
            n: dataset.len(),
            d_e,
            shortlist_size: DEFAULT_SHORTLIST,
            model_fingerprint: bundle.fingerprint(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d_e
    }

    pub fn shortlist_size(&self) -> usize {
        self.shortlist_size
    }

    pub fn set_shortlist_size(&mut self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::invalid("shortlist size must be positive"));
        }
        self.shortlist_size = m;
        Ok(())
    }

    pub fn model_fingerprint(&self) -> u64 {
        self.model_fingerprint
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.d_e..(i + 1) * self.d_e]
    }

    /// K geodesic-nearest dataset rows to `e` under `field`, ascending by
    /// distance with ties broken by lower row index. Geodesic failures fall
    /// back to the straight-line length and are flagged, never dropped.
    pub fn query(
        &self,
        e: &[f64],
        k: usize,
        field: &dyn MetricField,
        config: &GeodesicConfig,
    ) -> Result<Vec<NeighborHit>> {
        if e.len() != self.d_e {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingIndex::query point",
                expected: self.d_e,
                actual: e.len(),
            });
        }
        if field.dim() != self.d_e {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingIndex::query field",
                expected: self.d_e,
                actual: field.dim(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("query point"));
        }
        let m = self.shortlist_size.min(self.n);
        if k == 0 {
            return Err(Error::invalid("neighbor count K must be positive"));
        }
        if k > m {
            return Err(Error::invalid(format!(
                "neighbor count K={k} exceeds effective shortlist size {m}"
            )));
        }

        let sq_dist: Vec<f64> = (0..self.n)
            .map(|i| {
                self.embedding(i)
                    .iter()
                    .zip(e)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_unstable_by(|&a, &b| {
            sq_dist[a]
                .partial_cmp(&sq_dist[b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });

        let mut hits = Vec::with_capacity(m);
        for &i in &order[..m] {
            let target = self.embedding(i);
            let hit = match estimate_geodesic(e, target, field, config) {
                Ok(res) => NeighborHit {
                    id: i,
                    distance: res.distance,
                    fallback: res.fallback,
                },
                Err(err) if err.is_numerical() => {
                    let straight = SplineCurve::straight(e.to_vec(), target.to_vec());
                    let distance = match curve_length(&straight, field, config.grid) {
                        Ok(len) if len.is_finite() => len,
                        _ => sq_dist[i].sqrt(),
                    };
                    NeighborHit {
                        id: i,
                        distance,
                        fallback: true,
                    }
                }
                Err(err) => return Err(err),
            };
            hits.push(hit);
        }
        hits.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .expect("finite distances")
                .then(a.id.cmp(&b.id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let header = IndexHeader {
            n: self.n,
            d_e: self.d_e,
            shortlist_size: self.shortlist_size,
            model_fingerprint: self.model_fingerprint,
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::format(e.to_string()))?;
        let mut store = TensorStore::new(json);
        store.insert(
            "embeddings",
            vec![self.n, self.d_e],
            self.embeddings.clone(),
        )?;
        store.save(path)
    }

    /// Loads an index and refuses one built by a different model.
    pub fn load(
        path: impl AsRef<std::path::Path>,
        bundle: &LatentModelBundle,
    ) -> Result<Self> {
        let store = TensorStore::load(path)?;
        let header: IndexHeader = serde_json::from_str(store.config_json())
            .map_err(|e| Error::format(format!("embedding index header: {e}")))?;
        if header.model_fingerprint != bundle.fingerprint() {
            return Err(Error::invalid(
                "embedding index was built by a different model checkpoint",
            ));
        }
        if header.d_e != bundle.d_e() {
            return Err(Error::DimensionMismatch {
                context: "EmbeddingIndex::load embedding dimension",
                expected: bundle.d_e(),
                actual: header.d_e,
            });
        }
        let tensor = store.get("embeddings")?;
        if tensor.shape != [header.n, header.d_e] {
            return Err(Error::format("embedding tensor shape mismatch"));
        }
        Ok(EmbeddingIndex {
            embeddings: tensor.data.clone(),
            n: header.n,
            d_e: header.d_e,
            shortlist_size: header.shortlist_size,
            model_fingerprint: header.model_fingerprint,
        })
    }
}
