//! Versioned text container for model parameters.
//!
//! ```text
//! coso-checkpoint 1
//! meta <key> <value>
//! block <name> <dim0>x<dim1>...
//! <values, space separated, shortest round-trip form>
//! end
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{write_atomic, HarnessError};
use crate::coso_rl::Trainer;
use crate::policy::{PolicyParams, PolicySpec};
use crate::scm::Scm;
use crate::textmdp::Env;

pub const MAGIC: &str = "coso-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub blocks: Vec<Block>,
}

fn bad(m: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(m.into())
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "block {name} shape");
        self.blocks.push(Block { name: name.into(), shape, data });
    }

    pub fn block(&self, name: &str) -> Result<&Block, HarnessError> {
        self.blocks.iter().find(|b| b.name == name).ok_or_else(|| bad(format!("missing block {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str, HarnessError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| bad(format!("missing meta {key}")))
    }

    fn meta_num<T: std::str::FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        self.meta(key)?.parse().map_err(|_| bad(format!("bad meta {key}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for b in &self.blocks {
            let shape: Vec<String> = b.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("block {} {}\n", b.name, shape.join("x")));
            let vals: Vec<String> = b.data.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.parse::<u32>() == Ok(VERSION) => {}
            Some((MAGIC, v)) => return Err(bad(format!("unsupported checkpoint version {v}"))),
            _ => return Err(bad("not a checkpoint")),
        }
        let mut ck = Checkpoint::default();
        loop {
            let line = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
            if line == "end" {
                return Ok(ck);
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), Some(v)) => {
                    ck.meta.insert(k.into(), v.into());
                }
                (Some("block"), Some(name), Some(shape)) => {
                    let shape: Vec<usize> = shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad(format!("bad shape for {name}"))))
                        .collect::<Result<_, _>>()?;
                    let data: Vec<f64> = lines
                        .next()
                        .ok_or_else(|| bad("truncated block"))?
                        .split_ascii_whitespace()
                        .map(|v| v.parse().map_err(|_| bad(format!("bad value in {name}"))))
                        .collect::<Result<_, _>>()?;
                    if data.len() != shape.iter().product::<usize>() {
                        return Err(bad(format!("block {name} has {} values for shape {shape:?}", data.len())));
                    }
                    ck.blocks.push(Block { name: name.into(), shape, data });
                }
                _ => return Err(bad(format!("unexpected line: {line}"))),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        let mut ck = Checkpoint::default();
        let spec = &t.policy.spec;
        ck.meta.insert("env".into(), t.env.id().into());
        ck.meta.insert("context".into(), spec.context.to_string());
        ck.meta.insert("seed".into(), t.seed.to_string());
        ck.meta.insert("iteration".into(), t.iteration.to_string());
        ck.meta.insert("env_steps".into(), t.env_steps.to_string());
        ck.meta.insert("policy_version".into(), t.policy.version.to_string());
        ck.meta.insert("scm_lr".into(), format!("{:?}", t.scm.lr()));
        ck.push("policy", vec![spec.dim(), spec.vocab_size], t.policy.weights.clone());
        ck.push("value", vec![t.value.weights.len()], t.value.weights.clone());
        let s = &t.scm;
        ck.push("scm", vec![s.params().len()], s.params().to_vec());
        ck.meta.insert("scm_shape".into(), format!("{}x{}x{}", s.n, s.vocab_size, s.classes));
        ck
    }

    /// Checks the checkpoint was written for `env`.
    pub fn check_env(&self, env: &Env) -> Result<(), HarnessError> {
        let id = self.meta("env")?;
        if id != env.id() {
            return Err(bad(format!("checkpoint is for {id}, not {}", env.id())));
        }
        Ok(())
    }

    pub fn policy(&self, env: &Env) -> Result<PolicyParams, HarnessError> {
        self.check_env(env)?;
        let spec = PolicySpec::for_env(env, self.meta_num("context")?);
        let b = self.block("policy")?;
        if b.shape != [spec.dim(), spec.vocab_size] {
            return Err(bad(format!("policy shape {:?} does not match env", b.shape)));
        }
        let mut p = PolicyParams::from_weights(spec, b.data.clone()).map_err(|e| bad(e.to_string()))?;
        p.version = self.meta_num("policy_version")?;
        Ok(p)
    }

    pub fn scm(&self, env: &Env) -> Result<Scm, HarnessError> {
        self.check_env(env)?;
        let g = env.grammar();
        let want = format!("{}x{}x{}", g.len(), env.vocab().size(), g.num_actions());
        if self.meta("scm_shape")? != want {
            return Err(bad("scm shape does not match env"));
        }
        Scm::from_params(g.len(), env.vocab().size(), g.num_actions(), self.meta_num("scm_lr")?, self.block("scm")?.data.clone())
            .map_err(|e| bad(e.to_string()))
    }
}
