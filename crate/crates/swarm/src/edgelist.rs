//! Plain-text topology files.
//!
//! ```text
//! # comment
//! <n> <d_bound>
//! <u> <v>
//! ...
//! ```
//!
//! Gnome ids are `0..n`. Blank lines and `#` comments are ignored anywhere.

use std::io::{self, BufRead, Write};

use swarm_core::topology::{Topology, TopologyError};

#[derive(Debug, thiserror::Error)]
pub enum EdgeListError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing header line `<n> <d_bound>`")]
    NoHeader,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn two_numbers(line: usize, text: &str) -> Result<(u64, u64), EdgeListError> {
    let mut it = text.split_whitespace();
    let mut next = |what: &str| -> Result<u64, EdgeListError> {
        let tok = it.next().ok_or_else(|| EdgeListError::Syntax {
            line,
            msg: format!("expected {what}"),
        })?;
        tok.parse().map_err(|_| EdgeListError::Syntax {
            line,
            msg: format!("`{tok}` is not a valid {what}"),
        })
    };
    let a = next("first number")?;
    let b = next("second number")?;
    if let Some(extra) = it.next() {
        return Err(EdgeListError::Syntax {
            line,
            msg: format!("unexpected `{extra}`"),
        });
    }
    Ok((a, b))
}

pub fn read_edge_list(r: impl BufRead) -> Result<Topology, EdgeListError> {
    let mut header = None;
    let mut edges = Vec::new();
    for (i, raw) in r.lines().enumerate() {
        let raw = raw?;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let line = i + 1;
        let (a, b) = two_numbers(line, text)?;
        match header {
            None => {
                let n = usize::try_from(a).ok().filter(|&n| n <= u32::MAX as usize);
                let d = u32::try_from(b).ok();
                match (n, d) {
                    (Some(n), Some(d)) => header = Some((n, d)),
                    _ => {
                        return Err(EdgeListError::Syntax {
                            line,
                            msg: "header values out of range".into(),
                        })
                    }
                }
            }
            Some((n, _)) => {
                if a >= n as u64 || b >= n as u64 {
                    return Err(EdgeListError::Syntax {
                        line,
                        msg: format!("edge ({a}, {b}) names a gnome outside 0..{n}"),
                    });
                }
                edges.push((a as u32, b as u32));
            }
        }
    }
    let (n, d) = header.ok_or(EdgeListError::NoHeader)?;
    Ok(Topology::new(n, d, edges)?)
}

pub fn write_edge_list(w: &mut dyn Write, topo: &Topology) -> io::Result<()> {
    writeln!(w, "{} {}", topo.len(), topo.d_bound())?;
    for (u, v) in topo.edges() {
        writeln!(w, "{} {}", u, v)?;
    }
    Ok(())
}
