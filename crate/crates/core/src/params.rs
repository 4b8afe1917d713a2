//! Named parameter collections and their checkpoint format.
//!
//! A [`ParamSet`] owns the learnable tensors of a model; iteration order is
//! always sorted by name. Parameters enter a [`Tape`] through [`bind`] and
//! get their gradients back through [`harvest`].
//!
//! Checkpoints are line-oriented text with a versioned header; values are
//! stored as hexadecimal f64 bit patterns so round-trips are exact:
//!
//! ```text
//! fsl-checkpoint v1
//! meta <key>=<value>          (zero or more)
//! tensor <name> <rank> <dim0> <dim1> ...
//! <hex64> <hex64> ...         (one line, len = product of dims)
//! end
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.map.insert(name.into(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear_grads(&mut self) {
        for t in self.map.values_mut() {
            t.clear_grad();
        }
    }

    /// Total number of scalar values across all tensors.
    pub fn n_values(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W, meta: &[(String, String)]) -> Result<()> {
        writeln!(w, "fsl-checkpoint v1")?;
        for (k, v) in meta {
            writeln!(w, "meta {k}={v}")?;
        }
        for (name, t) in self.iter() {
            write!(w, "tensor {name} {}", t.shape().len())?;
            for d in t.shape() {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            let mut first = true;
            for &v in t.values() {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{:016x}", v.encode_bits())?;
                first = false;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<(Self, Vec<(String, String)>)> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };

        let (n, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty checkpoint".into()))?;
        let header = header?;
        if header.trim() != "fsl-checkpoint v1" {
            return Err(parse_err(n, format!("unsupported header {header:?}")));
        }

        let mut meta = Vec::new();
        let mut params = ParamSet::new();
        let mut pending: Option<(String, usize, usize)> = None; // (name, expected len, decl line)
        let mut saw_end = false;
        for (n, line) in lines {
            let line = line?;
            let line = line.trim_end();
            if saw_end {
                if !line.is_empty() {
                    return Err(parse_err(n, "content after end marker".into()));
                }
                continue;
            }
            if let Some((name, expect, decl)) = pending.take() {
                let values: Vec<T> = line
                    .split_whitespace()
                    .map(|tok| {
                        u64::from_str_radix(tok, 16)
                            .map(T::decode_bits)
                            .map_err(|_| parse_err(n, format!("bad value token {tok:?}")))
                    })
                    .collect::<Result<_>>()?;
                if values.len() != expect {
                    return Err(parse_err(n, format!("tensor {name:?} expects {expect} values, got {}", values.len())));
                }
                let shape = params_shape(&params, &name, decl)?;
                params.insert(name, Tensor::new(shape, values).map_err(|e| parse_err(n, e.to_string()))?);
                continue;
            }
            if line == "end" {
                saw_end = true;
            } else if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, "meta line without '='".into()))?;
                meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut toks = rest.split_whitespace();
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(n, "tensor line without name".into()))?
                    .to_string();
                let rank: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(n, "tensor line without rank".into()))?;
                let dims: Vec<usize> = toks
                    .map(|t| t.parse().map_err(|_| parse_err(n, format!("bad dimension {t:?}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != rank {
                    return Err(parse_err(n, format!("rank {rank} with {} dims", dims.len())));
                }
                if params.map.contains_key(&name) {
                    return Err(parse_err(n, format!("duplicate tensor {name:?}")));
                }
                // Stash the declared shape in the map so the value line can
                // pick it up; replaced once values arrive.
                params.insert(name.clone(), Tensor::zeros(dims.clone()));
                pending = Some((name, dims.iter().product(), n));
            } else if !line.is_empty() {
                return Err(parse_err(n, format!("unrecognized line {line:?}")));
            }
        }
        if pending.is_some() {
            return Err(Error::Parse { line: 0, message: "checkpoint truncated inside tensor block".into() });
        }
        if !saw_end {
            return Err(Error::Parse { line: 0, message: "checkpoint missing end marker".into() });
        }
        Ok((params, meta))
    }
}

fn params_shape<T: Scalar>(params: &ParamSet<T>, name: &str, decl_line: usize) -> Result<Vec<usize>> {
    params
        .map
        .get(name)
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::Parse { line: decl_line + 1, message: format!("lost declaration for {name:?}") })
}

/// Tape leaves for every parameter of a [`ParamSet`], keyed by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name:?} is not bound to the tape")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Push every parameter onto the tape as a leaf.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ParamSet<T>) -> BoundParams {
    let vars = params
        .iter()
        .map(|(name, t)| (name.to_string(), tape.leaf_tensor(t)))
        .collect();
    BoundParams { vars }
}

/// Accumulate the tape gradients of every bound parameter back into the
/// [`ParamSet`] gradient buffers.
pub fn harvest<T: Scalar>(tape: &Tape<T>, bound: &BoundParams, params: &mut ParamSet<T>) -> Result<()> {
    for (name, var) in bound.iter() {
        params.get_mut(name)?.accumulate_grad(tape.grad(var))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_sorted() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.insert("z", Tensor::scalar(1.0));
        p.insert("a", Tensor::scalar(2.0));
        p.insert("m", Tensor::scalar(3.0));
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["a", "m", "z"]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 3, vec![0.1, -2.5e-300, 3.0, f64::MIN_POSITIVE, -0.0, 9.9]).unwrap());
        p.insert("b", Tensor::new(vec![3], vec![1.0 / 3.0, 0.0, -1.0]).unwrap());

        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf, &[("scalar".into(), "f64".into())]).unwrap();
        let (q, meta) = ParamSet::<f64>::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(meta, vec![("scalar".to_string(), "f64".to_string())]);
        assert_eq!(p, q);

        // Byte-identical re-serialization.
        let mut buf2 = Vec::new();
        q.write_checkpoint(&mut buf2, &[("scalar".into(), "f64".into())]).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn checkpoint_rejects_malformed() {
        let r = ParamSet::<f64>::read_checkpoint(&mut "bogus v9\nend\n".as_bytes());
        assert!(matches!(r, Err(Error::Parse { line: 1, .. })));

        let text = "fsl-checkpoint v1\ntensor w 1 2\ndeadbeef\nend\n";
        let r = ParamSet::<f64>::read_checkpoint(&mut text.as_bytes());
        assert!(matches!(r, Err(Error::Parse { line: 3, .. })), "{r:?}");
    }

    #[test]
    fn harvest_accumulates_into_params() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());

        let mut tape = Tape::new();
        let bound = bind(&mut tape, &p);
        let w = bound.var("w").unwrap();
        let loss = tape.sum_all(w);
        tape.backward(loss).unwrap();
        harvest(&tape, &bound, &mut p).unwrap();
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[1.0, 1.0]);

        // A second harvest accumulates.
        harvest(&tape, &bound, &mut p).unwrap();
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[2.0, 2.0]);
    }
}
