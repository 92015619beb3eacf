use std::fmt::Write as _;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

const PATH_MAGIC: &[u8; 8] = b"SGSTPATH";

/// `M` simulated paths on a common grid of `J+1` times.
///
/// All arrays are path-major: states are `M × (J+1) × d`, Brownian
/// increments `M × J × m` (increment `j` covers `[s_j, s_{j+1}]`) and
/// discounted payoffs `M × (J+1)`.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub(crate) times: Arc<[f64]>,
    pub(crate) n_paths: usize,
    pub(crate) state_dim: usize,
    pub(crate) noise_dim: usize,
    pub(crate) hurst: f64,
    pub(crate) states: Vec<f64>,
    pub(crate) noise: Vec<f64>,
    pub(crate) payoff: Vec<f64>,
    pub(crate) resampled: usize,
}

impl PathBatch {
    pub fn times(&self) -> &Arc<[f64]> {
        &self.times
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Number of fine-grid steps `J`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Paths that were redrawn because the first draw overflowed.
    pub fn resampled(&self) -> usize {
        self.resampled
    }

    /// `(J+1) × d` states of path `i`.
    pub fn states(&self, i: usize) -> &[f64] {
        let w = self.times.len() * self.state_dim;
        &self.states[i * w..(i + 1) * w]
    }

    pub fn state(&self, i: usize, j: usize) -> &[f64] {
        let d = self.state_dim;
        &self.states(i)[j * d..(j + 1) * d]
    }

    pub fn state_column(&self, i: usize, c: usize) -> Vec<f64> {
        self.states(i)
            .iter()
            .skip(c)
            .step_by(self.state_dim)
            .copied()
            .collect()
    }

    /// `J × m` Brownian increments of path `i`.
    pub fn noise(&self, i: usize) -> &[f64] {
        let w = self.steps() * self.noise_dim;
        &self.noise[i * w..(i + 1) * w]
    }

    pub fn payoff(&self, i: usize) -> &[f64] {
        let w = self.times.len();
        &self.payoff[i * w..(i + 1) * w]
    }

    /// Replaces the payoff by `Z_{s_j} = e^{−r s_j}·max(strike − X_{s_j}, 0)`
    /// with `X` the first state coordinate.
    pub fn payoff_put(&mut self, strike: f64, rate: f64) {
        let n = self.times.len();
        let d = self.state_dim;
        let discount: Vec<f64> = self.times.iter().map(|t| (-rate * t).exp()).collect();
        for (i, z) in self.payoff.chunks_mut(n).enumerate() {
            let states = &self.states[i * n * d..(i + 1) * n * d];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = discount[j] * (strike - states[j * d]).max(0.0);
            }
        }
    }

    /// Binary dump of the states: a 32-byte header (`SGSTPATH`, `M` as u64,
    /// `J` as u32, `d` as u32, the Hurst parameter as f64 bits), then the
    /// states as little-endian f64 in path-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PATH_MAGIC)?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.steps() as u32).to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&self.hurst.to_bits().to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.states.len() * 8);
        for x in &self.states {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// CSV dump with one row per `(path, time)` pair.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,time");
        for c in 0..self.state_dim {
            let _ = write!(s, ",x{}", c + 1);
        }
        s.push_str(",payoff\n");
        for i in 0..self.n_paths {
            for (j, t) in self.times.iter().enumerate() {
                let _ = write!(s, "{i},{t}");
                for x in self.state(i, j) {
                    let _ = write!(s, ",{x:e}");
                }
                let _ = writeln!(s, ",{:e}", self.payoff(i)[j]);
            }
        }
        s
    }
}

/// States read back from a binary path dump.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDump {
    pub n_paths: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub hurst: f64,
    pub states: Vec<f64>,
}

pub fn read_path_dump<R: Read>(mut r: R) -> Result<PathDump> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[..8] != PATH_MAGIC {
        return Err(Error::Format("not a path dump (bad magic)".into()));
    }
    let n_paths = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let steps = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    let state_dim = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    let hurst = f64::from_bits(u64::from_le_bytes(header[24..32].try_into().unwrap()));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = n_paths * (steps + 1) * state_dim * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "path dump body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let states = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(PathDump {
        n_paths,
        steps,
        state_dim,
        hurst,
        states,
    })
}
