//! Offline transition datasets.
//!
//! Rewards are stored normalized: the raw dataset min/max map affinely onto
//! [-1, 1], and the (r_min, r_max) pair is kept in the metadata so raw
//! returns can be recovered at evaluation time.
//!
//! File layout (little-endian): magic "GLTD", u32 version, u64 d_s, u64 d_a,
//! u64 n, f64 r_min, f64 r_max, then n rows of
//! `s (d_s f64) | a (d_a f64) | r f64 | s' (d_s f64) | episode u64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"GLTD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Normalized reward in [-1, 1].
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_s: usize,
    pub d_a: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub transitions: Vec<Transition>,
}

/// One raw transition before reward normalization.
#[derive(Debug, Clone)]
pub struct RawTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub episode: u64,
}

impl Dataset {
    /// Normalizes raw rewards onto [-1, 1]. A constant-reward dataset maps
    /// to 0 everywhere (the affine map is degenerate).
    pub fn from_raw(d_s: usize, d_a: usize, raw: Vec<RawTransition>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("dataset must contain at least one transition"));
        }
        for t in &raw {
            if t.state.len() != d_s || t.next_state.len() != d_s {
                return Err(Error::DimensionMismatch {
                    context: "Dataset::from_raw state",
                    expected: d_s,
                    actual: t.state.len(),
                });
            }
            if t.action.len() != d_a {
                return Err(Error::DimensionMismatch {
                    context: "Dataset::from_raw action",
                    expected: d_a,
                    actual: t.action.len(),
                });
            }
        }
        let r_min = raw.iter().map(|t| t.reward).fold(f64::INFINITY, f64::min);
        let r_max = raw.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max);
        let span = r_max - r_min;
        let transitions = raw
            .into_iter()
            .map(|t| Transition {
                state: t.state,
                action: t.action,
                reward: if span > 0.0 {
                    2.0 * (t.reward - r_min) / span - 1.0
                } else {
                    0.0
                },
                next_state: t.next_state,
                episode: t.episode,
            })
            .collect();
        Ok(Dataset {
            d_s,
            d_a,
            r_min,
            r_max,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn denormalize_reward(&self, r: f64) -> f64 {
        let span = self.r_max - self.r_min;
        if span > 0.0 {
            self.r_min + (r + 1.0) * span / 2.0
        } else {
            self.r_min
        }
    }

    /// Raw (denormalized) return of each episode, in episode order.
    pub fn episode_returns_raw(&self) -> Vec<f64> {
        let mut returns = Vec::new();
        let mut current: Option<u64> = None;
        for t in &self.transitions {
            if current != Some(t.episode) {
                returns.push(0.0);
                current = Some(t.episode);
            }
            *returns.last_mut().expect("pushed above") += self.denormalize_reward(t.reward);
        }
        returns
    }

    pub fn mean_episode_return(&self) -> f64 {
        let returns = self.episode_returns_raw();
        returns.iter().sum::<f64>() / returns.len() as f64
    }

    /// Start indices of every window of `h` consecutive transitions drawn
    /// from a single episode (rows are stored in generation order).
    pub fn window_starts(&self, h: usize) -> Vec<usize> {
        if h == 0 || self.transitions.len() < h {
            return Vec::new();
        }
        let mut starts = Vec::new();
        for i in 0..=(self.transitions.len() - h) {
            let ep = self.transitions[i].episode;
            if self.transitions[i..i + h].iter().all(|t| t.episode == ep) {
                starts.push(i);
            }
        }
        starts
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_s as u64).to_le_bytes())?;
        w.write_all(&(self.d_a as u64).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        w.write_all(&self.r_min.to_le_bytes())?;
        w.write_all(&self.r_max.to_le_bytes())?;
        for t in &self.transitions {
            for &v in t.state.iter().chain(&t.action) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&t.reward.to_le_bytes())?;
            for &v in &t.next_state {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&t.episode.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("dataset truncated before magic"))?;
        if magic != MAGIC {
            return Err(Error::format("not a dataset file (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported dataset format version {version}"
            )));
        }
        let d_s = read_u64(r)? as usize;
        let d_a = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        let r_min = read_f64(r)?;
        let r_max = read_f64(r)?;
        let mut transitions = Vec::with_capacity(n);
        for _ in 0..n {
            let mut state = Vec::with_capacity(d_s);
            for _ in 0..d_s {
                state.push(read_f64(r)?);
            }
            let mut action = Vec::with_capacity(d_a);
            for _ in 0..d_a {
                action.push(read_f64(r)?);
            }
            let reward = read_f64(r)?;
            let mut next_state = Vec::with_capacity(d_s);
            for _ in 0..d_s {
                next_state.push(read_f64(r)?);
            }
            let episode = read_u64(r)?;
            transitions.push(Transition {
                state,
                action,
                reward,
                next_state,
                episode,
            });
        }
        Ok(Dataset {
            d_s,
            d_a,
            r_min,
            r_max,
            transitions,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("dataset truncated"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("dataset truncated"))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("dataset truncated"))?;
    Ok(f64::from_le_bytes(buf))
}
