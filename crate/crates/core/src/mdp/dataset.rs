use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::SeededStream;

use super::model::MdpSpec;
use super::policy::PolicyDensity;

/// One transition tuple `(s, a, r, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// `N` trajectories of `T` transitions, stored in `(i, t)` lexicographic
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_traj: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub tuples: Vec<Transition>,
}

const BINARY_MAGIC: &[u8; 8] = b"QSIEVDS1";

impl Dataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn get(&self, i: usize, t: usize) -> &Transition {
        &self.tuples[i * self.horizon + t]
    }

    /// Transitions of trajectory `i`.
    pub fn trajectory(&self, i: usize) -> &[Transition] {
        &self.tuples[i * self.horizon..(i + 1) * self.horizon]
    }

    /// The first `n` trajectories.
    pub fn take_trajectories(&self, n: usize) -> Dataset {
        let n = n.min(self.n_traj);
        Dataset {
            n_traj: n,
            tuples: self.tuples[..n * self.horizon].to_vec(),
            ..self.clone_header()
        }
    }

    /// Dataset made of the given trajectories (repeats allowed), in order.
    pub fn select_trajectories(&self, ids: &[usize]) -> Dataset {
        let mut tuples = Vec::with_capacity(ids.len() * self.horizon);
        for &i in ids {
            tuples.extend_from_slice(self.trajectory(i));
        }
        Dataset {
            n_traj: ids.len(),
            tuples,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            n_traj: 0,
            horizon: self.horizon,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            seed: self.seed,
            burn_in: self.burn_in,
            tuples: Vec::new(),
        }
    }

    /// `(s, a)` points in row order.
    pub fn state_actions(&self) -> Vec<Vec<f64>> {
        self.tuples.iter().map(|x| super::concat(&x.s, &x.a)).collect()
    }

    pub fn next_states(&self) -> Vec<Vec<f64>> {
        self.tuples.iter().map(|x| x.s_next.clone()).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.tuples.iter().map(|x| x.r).collect()
    }

    /// CSV with header `traj,t,s_1..,a_1..,r,sp_1..` preceded by one
    /// `#`-comment line holding the seed record. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={} burn_in={}\n", self.seed, self.burn_in);
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend((1..=self.state_dim).map(|k| format!("s_{k}")));
        header.extend((1..=self.action_dim).map(|k| format!("a_{k}")));
        header.push("r".into());
        header.extend((1..=self.state_dim).map(|k| format!("sp_{k}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for (idx, x) in self.tuples.iter().enumerate() {
            let (i, t) = (idx / self.horizon, idx % self.horizon);
            let mut fields = vec![i.to_string(), t.to_string()];
            fields.extend(x.s.iter().map(f64::to_string));
            fields.extend(x.a.iter().map(f64::to_string));
            fields.push(x.r.to_string());
            fields.extend(x.s_next.iter().map(f64::to_string));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Dataset> {
        Self::read_csv(BufReader::new(text.as_bytes()))
    }

    fn read_csv(reader: impl BufRead) -> Result<Dataset> {
        let mut seed = 0;
        let mut burn_in = 0;
        let mut header: Option<(usize, usize)> = None;
        let mut rows: Vec<(usize, usize, Transition)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("seed", v)) => seed = parse_int(v, lineno)? as u64,
                        Some(("burn_in", v)) => burn_in = parse_int(v, lineno)?,
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some((ds, da)) = header else {
                header = Some(parse_header(&fields)?);
                continue;
            };
            if fields.len() != 3 + 2 * ds + da {
                return Err(Error::input(format!(
                    "dataset line {}: expected {} fields, found {}",
                    lineno + 1,
                    3 + 2 * ds + da,
                    fields.len()
                )));
            }
            let nums = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::input(format!("dataset line {}: bad number {f:?}", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((
                parse_int(fields[0], lineno)?,
                parse_int(fields[1], lineno)?,
                Transition {
                    s: nums[..ds].to_vec(),
                    a: nums[ds..ds + da].to_vec(),
                    r: nums[ds + da],
                    s_next: nums[ds + da + 1..].to_vec(),
                },
            ));
        }
        let (state_dim, action_dim) = header.ok_or_else(|| Error::input("dataset has no header"))?;
        let n_traj = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let horizon = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if n_traj * horizon != rows.len() {
            return Err(Error::input("dataset rows do not form a complete N x T grid"));
        }
        for (idx, (i, t, _)) in rows.iter().enumerate() {
            if *i != idx / horizon || *t != idx % horizon {
                return Err(Error::input(format!(
                    "dataset rows must be in (traj, t) order; row {} is ({i}, {t})",
                    idx + 1
                )));
            }
        }
        Ok(Dataset {
            n_traj,
            horizon,
            state_dim,
            action_dim,
            seed,
            burn_in,
            tuples: rows.into_iter().map(|r| r.2).collect(),
        })
    }

    /// Little-endian binary container: magic, header words, then every
    /// tuple's floats in CSV column order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.len() * 8 * (1 + 2 * self.state_dim + self.action_dim));
        out.extend_from_slice(BINARY_MAGIC);
        for w in [
            self.n_traj as u64,
            self.horizon as u64,
            self.state_dim as u64,
            self.action_dim as u64,
            self.seed,
            self.burn_in as u64,
        ] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for x in &self.tuples {
            for v in x.s.iter().chain(&x.a).chain(std::iter::once(&x.r)).chain(&x.s_next) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Dataset> {
        let mut magic = [0u8; 8];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::input("not a dataset container (bad magic)"));
        }
        let mut words = [0u64; 6];
        for w in &mut words {
            let mut b = [0u8; 8];
            read_exact(&mut bytes, &mut b)?;
            *w = u64::from_le_bytes(b);
        }
        let [n_traj, horizon, ds, da, seed, burn_in] = words;
        let (n_traj, horizon, ds, da) = (n_traj as usize, horizon as usize, ds as usize, da as usize);
        let width = 1 + 2 * ds + da;
        let count = n_traj
            .checked_mul(horizon)
            .and_then(|n| n.checked_mul(width * 8))
            .ok_or_else(|| Error::input("dataset container header overflows"))?;
        if bytes.len() != count {
            return Err(Error::input(format!(
                "dataset container holds {} payload bytes, header implies {count}",
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tuples = vals
            .chunks_exact(width)
            .map(|row| Transition {
                s: row[..ds].to_vec(),
                a: row[ds..ds + da].to_vec(),
                r: row[ds + da],
                s_next: row[ds + da + 1..].to_vec(),
            })
            .collect();
        Ok(Dataset {
            n_traj,
            horizon,
            state_dim: ds,
            action_dim: da,
            seed,
            burn_in: burn_in as usize,
            tuples,
        })
    }

    /// Writes CSV, or the binary container when the extension is `.bin`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            write_atomic(path, &self.to_bytes())
        } else {
            write_atomic(path, self.to_csv().as_bytes())
        }
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut f = std::fs::File::open(path)
            .map_err(|e| Error::input(format!("cannot open dataset {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "bin") {
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            Self::from_bytes(&buf)
        } else {
            Self::read_csv(BufReader::new(f))
        }
    }
}

fn read_exact(bytes: &mut &[u8], out: &mut [u8]) -> Result<()> {
    bytes
        .read_exact(out)
        .map_err(|_| Error::input("dataset container is truncated"))
}

fn parse_int(v: &str, lineno: usize) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::input(format!("dataset line {}: bad integer {v:?}", lineno + 1)))
}

fn parse_header(fields: &[&str]) -> Result<(usize, usize)> {
    let count = |prefix: &str| fields.iter().filter(|f| f.starts_with(prefix)).count();
    let (ds, da) = (count("s_"), count("a_"));
    let mut expected = vec!["traj".to_string(), "t".to_string()];
    expected.extend((1..=ds).map(|k| format!("s_{k}")));
    expected.extend((1..=da).map(|k| format!("a_{k}")));
    expected.push("r".into());
    expected.extend((1..=ds).map(|k| format!("sp_{k}")));
    if ds == 0 || da == 0 || fields != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::input(format!(
            "dataset header must read traj,t,s_1..,a_1..,r,sp_1..; got {}",
            fields.join(",")
        )));
    }
    Ok((ds, da))
}

/// Generates `n` trajectories of length `horizon` under `behavior`.
///
/// Trajectory `i` draws from its own stream `(seed, i)`: it starts uniform
/// on the state box, runs `burn_in` unrecorded steps, then records
/// `horizon` transitions. Output is identical for any thread count.
pub fn sample_trajectories(
    mdp: &MdpSpec,
    behavior: &PolicyDensity,
    n: usize,
    horizon: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || horizon == 0 {
        return Err(Error::input("need at least one trajectory and one step"));
    }
    if behavior.action_box() != &mdp.action_box {
        return Err(Error::input("behavior policy acts on a different action box"));
    }
    let trajectories: Vec<Vec<Transition>> = (0..n)
        .into_par_iter()
        .map(|i| simulate_one(mdp, behavior, i, horizon, burn_in, seed))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        n_traj: n,
        horizon,
        state_dim: mdp.state_dim(),
        action_dim: mdp.action_dim(),
        seed,
        burn_in,
        tuples: trajectories.into_iter().flatten().collect(),
    })
}

fn simulate_one(
    mdp: &MdpSpec,
    behavior: &PolicyDensity,
    i: usize,
    horizon: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<Transition>> {
    use rand::Rng;
    let mut rng = SeededStream::new(seed, i as u64).rng();
    let sb = &mdp.state_box;
    let mut s: Vec<f64> = (0..sb.dim()).map(|k| rng.random_range(sb.lo[k]..=sb.hi[k])).collect();
    let mut out = Vec::with_capacity(horizon);
    for step in 0..burn_in + horizon {
        let a = behavior.sample(&s, &mut rng);
        if !mdp.action_box.contains(&a) {
            return Err(Error::Generation {
                trajectory: i,
                step,
                reason: format!("behavior action {a:?} outside the action box"),
            });
        }
        let s_next = mdp.transition.sample(&s, &a, &mut rng);
        if !sb.contains(&s_next) || s_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation {
                trajectory: i,
                step,
                reason: format!("next state {s_next:?} outside the state box"),
            });
        }
        if step >= burn_in {
            let r = mdp.reward.sample(&s, &a, &s_next, &mut rng);
            out.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: s_next.clone(),
            });
        }
        s = s_next;
    }
    Ok(out)
}
